//! Exact references on the half-line `[0, ∞)`.
//!
//! Reflected Brownian motion from `x0 ≥ 0` is `X = x0 + W + ℓ` with
//! `ℓ_t = (sup_{s≤t}(−W_s) − x0)⁺`. Sampling the bridge maximum of `−W` on
//! each grid interval makes `(X, ℓ)` exact at grid times.
//!
//! Sticky Brownian motion with `θ = 2β₀/α₀` is the time change of the
//! reflected motion by `A = s + θℓ_s`. From 0 its marginal is
//!
//! ```text
//! P(0 < X_t ≤ x) = ∫₀^{t/θ} 2/√(2πu) (e^{−l²/2u} − e^{−(l+x)²/2u}) dl,  u = t − θl,
//! ```
//!
//! with the remaining mass as an atom at 0. Paths on a grid are sampled
//! as a Markov chain: from `x > 0` the first hitting time of 0 is
//! `x²/Z²`; before it the motion is killed Brownian motion, after it the
//! marginal from 0 applies.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::generator::{apply_l, TestFunction};
use crate::linalg::Vector;
use crate::quadrature::gauss_legendre;
use crate::schemes::{run_ensemble, FinalState, Scenario, StartSpec};
use crate::stats::{mean_se, normal_cdf};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSticky1D {
    pub alpha0: f64,
    pub beta0: f64,
    pub horizon: f64,
    pub grid: Vec<f64>,
}

impl ExactSticky1D {
    pub fn new(alpha0: f64, beta0: f64, horizon: f64, grid: Vec<f64>) -> Result<Self> {
        if !(alpha0 > 0.0) || !(beta0 >= 0.0) {
            return Err(Error::Validation(format!("need alpha0 > 0 and beta0 ≥ 0, got {alpha0}, {beta0}")));
        }
        if grid.first().is_some_and(|t| *t < 0.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("grid must be increasing from 0".into()));
        }
        Ok(ExactSticky1D {
            alpha0,
            beta0,
            horizon,
            grid,
        })
    }

    /// Uniform grid `0, dt_out, …, horizon`.
    pub fn uniform(alpha0: f64, beta0: f64, horizon: f64, dt_out: f64) -> Result<Self> {
        let n = (horizon / dt_out + 1e-9).floor() as usize;
        Self::new(alpha0, beta0, horizon, (0..=n).map(|j| j as f64 * dt_out).collect())
    }

    /// Time-change rate per unit push, `2β₀/α₀`.
    pub fn theta(&self) -> f64 {
        2.0 * self.beta0 / self.alpha0
    }

    pub fn marginal(&self, t: f64) -> StickyMarginal {
        StickyMarginal::new(self.theta(), t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReflectedSample {
    pub path: Vec<f64>,
    pub local_time: Vec<f64>,
}

/// Exact reflected Brownian motion from `x0` and its local time at 0 on
/// an increasing grid.
pub fn sample_reflected_with_local_time<R: Rng + ?Sized>(rng: &mut R, grid: &[f64], x0: f64) -> ReflectedSample {
    let mut path = Vec::with_capacity(grid.len());
    let mut local_time = Vec::with_capacity(grid.len());
    let mut w = 0.0;
    let mut sup_neg = 0.0f64;
    let mut last = 0.0;
    for &t in grid {
        let dt = t - last;
        if dt > 0.0 {
            let next = w + dt.sqrt() * Distribution::<f64>::sample(&StandardNormal, rng);
            // Maximum of the bridge of −W from −w to −next.
            let (a, b) = (-w, -next);
            let u: f64 = 1.0 - rng.random::<f64>();
            let m = 0.5 * (a + b + ((a - b).powi(2) - 2.0 * dt * u.ln()).sqrt());
            sup_neg = sup_neg.max(m);
            w = next;
        }
        last = t;
        let l = (sup_neg - x0).max(0.0);
        path.push(x0 + w + l);
        local_time.push(l);
    }
    ReflectedSample { path, local_time }
}

/// Law of sticky Brownian motion at time `t` started from 0.
#[derive(Clone, Debug)]
pub struct StickyMarginal {
    pub theta: f64,
    pub t: f64,
    /// Quadrature in the local-time variable.
    nodes: Vec<(f64, f64)>,
    positive_mass: f64,
}

impl StickyMarginal {
    pub fn new(theta: f64, t: f64) -> Self {
        let nodes = if theta > 0.0 {
            let upper = (t / theta).min(12.0 * t.sqrt());
            let panels = 16;
            let h = upper / panels as f64;
            (0..panels)
                .flat_map(|p| gauss_legendre(16, p as f64 * h, (p + 1) as f64 * h))
                .collect()
        } else {
            Vec::new()
        };
        let mut m = StickyMarginal {
            theta,
            t,
            nodes,
            positive_mass: 1.0,
        };
        if theta > 0.0 {
            m.positive_mass = m
                .nodes
                .iter()
                .map(|&(l, w)| {
                    let u = t - theta * l;
                    if u <= 0.0 {
                        0.0
                    } else {
                        w * 2.0 / (2.0 * std::f64::consts::PI * u).sqrt() * (-l * l / (2.0 * u)).exp()
                    }
                })
                .sum();
        }
        m
    }

    /// `P(X_t = 0)`.
    pub fn atom(&self) -> f64 {
        1.0 - self.positive_mass
    }

    /// `P(X_t ≤ x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if self.theta == 0.0 {
            return 2.0 * normal_cdf(x / self.t.sqrt()) - 1.0;
        }
        let pos: f64 = self
            .nodes
            .iter()
            .map(|&(l, w)| {
                let u = self.t - self.theta * l;
                if u <= 0.0 {
                    return 0.0;
                }
                w * 2.0 / (2.0 * std::f64::consts::PI * u).sqrt() * ((-l * l / (2.0 * u)).exp() - (-(l + x).powi(2) / (2.0 * u)).exp())
            })
            .sum();
        self.atom() + pos
    }

    /// `P(X_t < x)`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.cdf(x)
        }
    }

    /// Density of the continuous part.
    pub fn density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if self.theta == 0.0 {
            return 2.0 * (-x * x / (2.0 * self.t)).exp() / (2.0 * std::f64::consts::PI * self.t).sqrt();
        }
        self.nodes
            .iter()
            .map(|&(l, w)| {
                let u = self.t - self.theta * l;
                if u <= 0.0 {
                    return 0.0;
                }
                w * 2.0 * (l + x) / (2.0 * std::f64::consts::PI * u.powi(3)).sqrt() * (-(l + x).powi(2) / (2.0 * u)).exp()
            })
            .sum()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random())
    }

    /// Smallest `x` with `P(X_t ≤ x) ≥ p`, by bisection.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= self.atom() {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, 12.0 * self.t.sqrt());
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Exact sticky path on `cfg.grid`, started at 0.
pub fn sample_sticky_1d<R: Rng + ?Sized>(cfg: &ExactSticky1D, rng: &mut R) -> Vec<f64> {
    if cfg.beta0 == 0.0 {
        return sample_reflected_with_local_time(rng, &cfg.grid, 0.0).path;
    }
    let theta = cfg.theta();
    let mut out = Vec::with_capacity(cfg.grid.len());
    let mut x = 0.0f64;
    let mut last = 0.0;
    for &t in &cfg.grid {
        let dt = t - last;
        if dt > 0.0 {
            x = sticky_transition(theta, x, dt, rng);
        }
        last = t;
        out.push(x);
    }
    out
}

fn sticky_transition<R: Rng + ?Sized>(theta: f64, x: f64, dt: f64, rng: &mut R) -> f64 {
    if x > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        let hit = x * x / (z * z);
        if hit >= dt {
            // Killed motion conditioned to survive: accept y with the bridge
            // survival probability.
            loop {
                let y = x + dt.sqrt() * Distribution::<f64>::sample(&StandardNormal, rng);
                if y > 0.0 && rng.random::<f64>() < -(-2.0 * x * y / dt).exp_m1() {
                    return y;
                }
            }
        }
        return StickyMarginal::new(theta, dt - hit).sample(rng);
    }
    StickyMarginal::new(theta, dt).sample(rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorResidual {
    pub residual: f64,
    pub std_error: f64,
    pub lf: f64,
}

/// Monte Carlo `(E_x f(X_h) − f(x))/h − Lf(x)` with its standard error.
pub fn brute_force_generator_check(f: &TestFunction, scn: &Scenario, x: &Vector, h: f64, n_mc: usize) -> Result<GeneratorResidual> {
    let mut s = scn.clone();
    s.start = StartSpec::Point(*x);
    s.horizon = h;
    s.dt_out = h;
    s.n_paths = n_mc;
    let lf = apply_l(f, &s.pair, &s.geom, x, s.delta)?;
    let f0 = f.value(x);
    let diffs: Vec<f64> = run_ensemble(&s, |_| FinalState::new(h))?
        .into_iter()
        .map(|(o, _)| (f.value(&o.state.expect("horizon reached").0) - f0) / h)
        .collect();
    let (m, se) = mean_se(&diffs);
    Ok(GeneratorResidual {
        residual: m - lf,
        std_error: se,
        lf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_one_sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reflected_local_time_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let ls: Vec<f64> = (0..n)
            .map(|_| {
                *sample_reflected_with_local_time(&mut rng, &[0.25, 0.5, 1.0], 0.0)
                    .local_time
                    .last()
                    .unwrap()
            })
            .collect();
        let (m, se) = mean_se(&ls);
        let want = (2.0 / std::f64::consts::PI).sqrt();
        assert!((m - want).abs() < 4.0 * se, "{m} ± {se} vs {want}");
    }

    #[test]
    fn reflected_path_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid: Vec<f64> = (1..=200).map(|i| i as f64 * 0.01).collect();
        for _ in 0..100 {
            let s = sample_reflected_with_local_time(&mut rng, &grid, 0.3);
            assert!(s.path.iter().all(|x| *x >= 0.0));
            assert!(s.local_time.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn marginal_is_a_distribution() {
        for (theta, t) in [(2.0, 0.5), (2.0, 1.0), (0.5, 3.0), (1e-4, 1.0)] {
            let m = StickyMarginal::new(theta, t);
            assert!(m.atom() > 0.0 && m.atom() < 1.0);
            assert!((m.cdf(50.0) - 1.0).abs() < 1e-10, "{theta} {t}");
            // The density integrates to the positive mass.
            let mass: f64 = gauss_legendre(200, 0.0, 12.0 * t.sqrt())
                .iter()
                .map(|(x, w)| w * m.density(*x))
                .sum();
            assert!((mass - (1.0 - m.atom())).abs() < 1e-8);
        }
        // Small t: the atom is about θ·E[ℓ_t]/t-scale; it vanishes as θ → 0.
        assert!(StickyMarginal::new(1e-6, 1.0).atom() < 1e-5);
    }

    #[test]
    fn atom_matches_expected_stuck_time() {
        // ∫₀^T P(X_t = 0) dt = θ·E[ℓ at τ_T]; for small θ this tends to
        // θ·E ℓ_T = θ√(2T/π).
        let theta = 1e-3;
        let nodes = gauss_legendre(64, 0.0, 1.0);
        let stuck: f64 = nodes.iter().map(|(t, w)| w * StickyMarginal::new(theta, *t).atom()).sum();
        let want = theta * (2.0 / std::f64::consts::PI).sqrt();
        assert!((stuck - want).abs() < 1e-2 * want, "{stuck} vs {want}");
    }

    #[test]
    fn sampled_marginal_matches_cdf() {
        let cfg = ExactSticky1D::uniform(1.0, 1.0, 1.0, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20_000;
        let ends: Vec<f64> = (0..n).map(|_| *sample_sticky_1d(&cfg, &mut rng).last().unwrap()).collect();
        let m = cfg.marginal(1.0);
        let d = ks_one_sample(&ends, |x| m.cdf(x), |x| m.cdf_left(x));
        assert!(d < 1.63 / (n as f64).sqrt(), "KS {d}");
    }

    #[test]
    fn zero_beta_is_the_reflected_driver() {
        let cfg = ExactSticky1D::uniform(1.0, 0.0, 2.0, 0.1).unwrap();
        let a = sample_sticky_1d(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let b = sample_reflected_with_local_time(&mut ChaCha8Rng::seed_from_u64(4), &cfg.grid, 0.0).path;
        assert_eq!(a, b);
    }

    #[test]
    fn sticky_oracle_spends_time_at_zero() {
        let cfg = ExactSticky1D::uniform(1.0, 1.0, 100.0, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 2000;
        let mut zeros = 0usize;
        let mut total = 0usize;
        for _ in 0..n {
            let p = sample_sticky_1d(&cfg, &mut rng);
            zeros += p[1..].iter().filter(|x| **x == 0.0).count();
            total += p.len() - 1;
        }
        assert!(zeros > 0);
        assert!(zeros as f64 / total as f64 > 0.01);
    }
}
