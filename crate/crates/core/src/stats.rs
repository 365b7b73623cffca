//! Acceptance statistics: binomial tails and percent points, the interval
//! tests `T(m, p*, beta)`, `T^-(m, p*, beta)` and `T(m, 0)`, hypergeometric
//! sampling without replacement and the soundness constant `c(alpha, beta)`.
//!
//! # Tail parameter convention
//!
//! Tests take `beta_tail`, the probability mass an ideal i.i.d. sample leaves
//! outside the acceptance region on each side. The threshold multiplier is the
//! upper-tail normal quantile `z = Phi^{-1}(1 - beta_tail)` (so `beta_tail =
//! 0.1587` gives `z = 1`) and ideal data then pass a two-sided test with
//! probability `1 - 2 beta_tail`, a one-sided test with `1 - beta_tail`.
//! Reports carry both numbers.

use libm::{erfc, lgamma};
use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `n` for which hypergeometric probabilities are computed exactly.
pub const EXACT_HYPERGEOM_LIMIT: u64 = 64;

/// Slack applied when comparing an integer count with a real region endpoint.
pub const REGION_SLACK: f64 = 1e-9;

fn ln_binomial(n: u64, k: u64) -> f64 {
    lgamma(n as f64 + 1.0) - lgamma(k as f64 + 1.0) - lgamma((n - k) as f64 + 1.0)
}

fn ln_pmf_binom(m: u64, p: f64, k: u64) -> f64 {
    ln_binomial(m, k) + k as f64 * p.ln() + (m - k) as f64 * (-p).ln_1p()
}

/// `P(X >= x)` for `X ~ Binomial(m, p)`; every term is summed in log space.
pub fn binom_tail_upper(m: u64, p: f64, x: u64) -> f64 {
    if x == 0 {
        return 1.0;
    }
    if x > m {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let logs: Vec<f64> = (x..=m).map(|k| ln_pmf_binom(m, p, k)).collect();
    log_sum_exp(&logs).exp().min(1.0)
}

/// `P(X <= x)` for `X ~ Binomial(m, p)`.
pub fn binom_tail_lower(m: u64, p: f64, x: u64) -> f64 {
    if x >= m {
        return 1.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let logs: Vec<f64> = (0..=x).map(|k| ln_pmf_binom(m, p, k)).collect();
    log_sum_exp(&logs).exp().min(1.0)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `x^+(p) = min { x : P(X >= x) <= alpha }`; returns `m + 1` when even
/// `x = m` has tail above `alpha`.
pub fn percent_point_upper(m: u64, p: f64, alpha: f64) -> Result<u64> {
    check_open_unit("alpha", alpha)?;
    let (mut lo, mut hi) = (0u64, m + 1);
    // invariant: tail(hi) <= alpha, and tail(lo - 1) > alpha when lo > 0
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if binom_tail_upper(m, p, mid) <= alpha {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// `x^-(p) = max { x : P(X <= x) <= alpha }`; returns `-1` when even `x = 0`
/// has tail above `alpha`.
pub fn percent_point_lower(m: u64, p: f64, alpha: f64) -> Result<i64> {
    check_open_unit("alpha", alpha)?;
    let mut best: i64 = -1;
    let (mut lo, mut hi) = (0i64, m as i64);
    while lo <= hi {
        let mid = lo + (hi - lo) / 2;
        if binom_tail_lower(m, p, mid as u64) <= alpha {
            best = mid;
            lo = mid + 1;
        } else {
            hi = mid - 1;
        }
    }
    Ok(best)
}

fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("{v} is not in (0, 1)")))
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `1 - Phi(x)`.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// `Phi^{-1}(q)` by Wichura's AS241 rational approximation followed by two
/// Newton steps on the exact CDF.
pub fn inv_norm_cdf(q: f64) -> Result<f64> {
    check_open_unit("q", q)?;
    if q > 0.5 {
        return Ok(-lower_quantile(1.0 - q));
    }
    Ok(lower_quantile(q))
}

/// Upper-tail quantile: `z` with `1 - Phi(z) = t`.
pub fn upper_quantile(t: f64) -> Result<f64> {
    check_open_unit("t", t)?;
    if t > 0.5 {
        return Ok(-lower_quantile(1.0 - t));
    }
    Ok(-lower_quantile(t))
}

// q <= 0.5
fn lower_quantile(q: f64) -> f64 {
    let mut x = as241(q);
    for _ in 0..2 {
        let err = norm_cdf(x) - q;
        let d = norm_pdf(x);
        if d > 0.0 {
            x -= err / d;
        }
    }
    x
}

fn as241(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        133.141_667_891_784_38,
        1_971.590_950_306_551_4,
        13_731.693_765_509_46,
        45_921.953_931_549_87,
        67_265.770_927_008_7,
        33_430.575_583_588_13,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_91,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_597,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_854,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_6,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_6,
        0.022_723_844_989_269_184,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        0.689_767_334_985_1,
        0.148_103_976_427_480_07,
        0.015_198_666_563_616_457,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_9,
        0.026_532_189_526_576_124,
        0.001_242_660_947_388_078_4,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_888,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_94e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let v = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -v
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    /// `T(m, p*, beta)`: two-sided region around `m p*`.
    TwoSided,
    /// `T^-(m, p*, beta)`: only a lower threshold.
    OneSided,
    /// `T(m, 0)`: pass iff no success is observed.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub m: u64,
    pub p_star: f64,
    pub alpha: f64,
    pub beta_tail: f64,
    pub kind: TestKind,
}

impl TestSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::param("m", "must be at least 1"));
        }
        check_open_unit("alpha", self.alpha)?;
        if self.kind != TestKind::Zero {
            check_open_unit("beta_tail", self.beta_tail)?;
            if !(self.p_star > 0.0 && self.p_star < 1.0) {
                return Err(Error::param(
                    "p_star",
                    format!(
                        "{} gives a degenerate region; use the zero test",
                        self.p_star
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Pass probability of ideal i.i.d. data in the normal approximation.
    pub fn acceptance_probability(&self) -> f64 {
        match self.kind {
            TestKind::TwoSided => 1.0 - 2.0 * self.beta_tail,
            TestKind::OneSided => 1.0 - self.beta_tail,
            TestKind::Zero => 1.0,
        }
    }

    pub fn sigma(&self) -> f64 {
        (self.p_star * (1.0 - self.p_star)).sqrt()
    }

    /// Acceptance region for the success count.
    pub fn region(&self) -> Result<(f64, Option<f64>)> {
        self.validate()?;
        if self.kind == TestKind::Zero {
            return Ok((0.0, Some(0.0)));
        }
        let z = upper_quantile(self.beta_tail)?;
        let m = self.m as f64;
        let half = m.sqrt() * z * self.sigma();
        let lo = m * self.p_star - half;
        match self.kind {
            TestKind::TwoSided => Ok((lo, Some(m * self.p_star + half))),
            _ => Ok((lo, None)),
        }
    }
}

/// What a passed test lets one say about the success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalConclusion {
    pub lower: f64,
    /// `None` stands for `+infinity`.
    pub upper: Option<f64>,
    pub significance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub pass: bool,
    pub observed: u64,
    pub region_lower: f64,
    pub region_upper: Option<f64>,
    pub acceptance_probability: f64,
    pub conclusion: Option<IntervalConclusion>,
}

pub fn run_test_t(spec: &TestSpec, x_observed: u64) -> Result<TestOutcome> {
    if spec.kind == TestKind::Zero {
        return Err(Error::param("kind", "use run_test_zero for the zero test"));
    }
    if x_observed > spec.m {
        return Err(Error::param(
            "x_observed",
            format!("{x_observed} > m = {}", spec.m),
        ));
    }
    let (lo, hi) = spec.region()?;
    let x = x_observed as f64;
    let pass = x >= lo - REGION_SLACK && hi.is_none_or(|h| x <= h + REGION_SLACK);
    let conclusion = if pass {
        let w = (upper_quantile(spec.beta_tail)? + upper_quantile(spec.alpha)?) * spec.sigma()
            / (spec.m as f64).sqrt();
        Some(IntervalConclusion {
            lower: spec.p_star - w,
            upper: match spec.kind {
                TestKind::TwoSided => Some(spec.p_star + w),
                _ => None,
            },
            significance: spec.alpha,
        })
    } else {
        None
    };
    Ok(TestOutcome {
        pass,
        observed: x_observed,
        region_lower: lo,
        region_upper: hi,
        acceptance_probability: spec.acceptance_probability(),
        conclusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroOutcome {
    pub pass: bool,
    pub observed: u64,
    /// Bound `(1 - alpha)/(m alpha)` on the success probability of an unseen copy.
    pub bound: f64,
    pub significance: f64,
}

pub fn run_test_zero(m: u64, x_observed: u64, alpha: f64) -> Result<ZeroOutcome> {
    check_open_unit("alpha", alpha)?;
    if m == 0 {
        return Err(Error::param("m", "must be at least 1"));
    }
    if x_observed > m {
        return Err(Error::param(
            "x_observed",
            format!("{x_observed} > m = {m}"),
        ));
    }
    Ok(ZeroOutcome {
        pass: x_observed == 0,
        observed: x_observed,
        bound: (1.0 - alpha) / (m as f64 * alpha),
        significance: alpha,
    })
}

/// `C(n, k)` exactly; zero outside `0 <= k <= n`.
pub fn binomial_u128(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

pub fn binomial_big(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    c
}

fn hypergeom_args(n: u64, m: u64, k: u64) -> Result<()> {
    if m > n || k > n {
        return Err(Error::param(
            "hypergeometric",
            format!("need m <= n and k <= n (n={n}, m={m}, k={k})"),
        ));
    }
    Ok(())
}

/// `C(m, x) C(n-m, k-x) / C(n, k)` exactly, for `n <= 64`.
pub fn hypergeom_pmf_exact(n: u64, m: u64, k: u64, x: u64) -> Result<Ratio<u128>> {
    hypergeom_args(n, m, k)?;
    if n > EXACT_HYPERGEOM_LIMIT {
        return Err(Error::param(
            "n",
            format!("exact hypergeometric limited to n <= {EXACT_HYPERGEOM_LIMIT}"),
        ));
    }
    if x > k || x > m {
        return Ok(Ratio::new_raw(0, 1));
    }
    let num = binomial_u128(m, x) * binomial_u128(n - m, k - x);
    Ok(Ratio::new(num, binomial_u128(n, k)))
}

pub fn hypergeom_pmf_big(n: u64, m: u64, k: u64, x: u64) -> Result<BigRational> {
    hypergeom_args(n, m, k)?;
    if x > k || x > m {
        return Ok(BigRational::zero());
    }
    Ok(BigRational::new(
        binomial_big(m, x) * binomial_big(n - m, k - x),
        binomial_big(n, k),
    ))
}

/// Hypergeometric probability; exact rationals for `n <= 64`, log-space above.
pub fn hypergeom_pmf(n: u64, m: u64, k: u64, x: u64) -> Result<f64> {
    if n <= EXACT_HYPERGEOM_LIMIT {
        let r = hypergeom_pmf_exact(n, m, k, x)?;
        return Ok(*r.numer() as f64 / *r.denom() as f64);
    }
    hypergeom_args(n, m, k)?;
    if x > k || x > m || k - x > n - m {
        return Ok(0.0);
    }
    Ok((ln_binomial(m, x) + ln_binomial(n - m, k - x) - ln_binomial(n, k)).exp())
}

/// `(n-m) m (n-k) k / ((n-1) n^2)`.
pub fn hypergeom_variance_exact(n: u64, m: u64, k: u64) -> Result<Ratio<u128>> {
    hypergeom_args(n, m, k)?;
    if n < 2 {
        return Err(Error::param("n", "variance needs n >= 2"));
    }
    let num = (n - m) as u128 * m as u128 * (n - k) as u128 * k as u128;
    let den = (n - 1) as u128 * n as u128 * n as u128;
    Ok(Ratio::new(num, den))
}

pub fn hypergeom_variance(n: u64, m: u64, k: u64) -> Result<f64> {
    let r = hypergeom_variance_exact(n, m, k)?;
    Ok(*r.numer() as f64 / *r.denom() as f64)
}

/// `c(alpha, beta) = |1/2 + n/(n-m) z sqrt(p*(1-p*))| / sqrt(alpha)` with the
/// upper-tail quantile `z` of `beta_tail`.
pub fn soundness_constant(n: u64, m: u64, p_star: f64, alpha: f64, beta_tail: f64) -> Result<f64> {
    if m == 0 || n <= m {
        return Err(Error::param("n", format!("need n > m >= 1 (n={n}, m={m})")));
    }
    check_open_unit("alpha", alpha)?;
    check_open_unit("beta_tail", beta_tail)?;
    if !(0.0..=1.0).contains(&p_star) {
        return Err(Error::param("p_star", format!("{p_star} outside [0, 1]")));
    }
    let z = upper_quantile(beta_tail)?;
    let ratio = n as f64 / (n - m) as f64;
    Ok((0.5 + ratio * z * (p_star * (1.0 - p_star)).sqrt()).abs() / alpha.sqrt())
}

/// Right side `(1/2 + n/(n-m) h)^2 / m` of the second-moment bound, where
/// `h` is the region half-width in units of `1/sqrt m`.
pub fn ll4_rhs(n: u64, m: u64, h: f64) -> f64 {
    let r = n as f64 / (n - m) as f64;
    (0.5 + r * h).powi(2) / m as f64
}

/// `E_X[1{|p* - X/m| <= h/sqrt m} (p* - (k - X)/(n - m))^2]` for a fixed
/// hidden count `k`, summed exactly over the hypergeometric law of `X`.
pub fn ll4_conditional_moment(n: u64, m: u64, k: u64, p_star: f64, h: f64) -> Result<f64> {
    if n <= m {
        return Err(Error::param("n", "need n > m"));
    }
    let mf = m as f64;
    let mut acc = 0.0;
    for x in 0..=m.min(k) {
        if (p_star - x as f64 / mf).abs() > h / mf.sqrt() {
            continue;
        }
        if k - x > n - m {
            continue;
        }
        let p = hypergeom_pmf(n, m, k, x)?;
        let d = p_star - (k - x) as f64 / (n - m) as f64;
        acc += p * d * d;
    }
    Ok(acc)
}

/// `E_X f(X)^2` for a hidden-count mixture `q[k]`, where `f(x)` is the
/// deviation of the posterior success probability of an unseen copy.
pub fn ll4_mixture_moment(n: u64, m: u64, q: &[f64], p_star: f64, h: f64) -> Result<f64> {
    if n <= m || q.len() as u64 != n + 1 {
        return Err(Error::param("q", "need n > m and n + 1 mixture weights"));
    }
    let mf = m as f64;
    let mut acc = 0.0;
    for x in 0..=m {
        if (p_star - x as f64 / mf).abs() > h / mf.sqrt() {
            continue;
        }
        let mut px = 0.0;
        let mut num = 0.0;
        for (k, &w) in q.iter().enumerate() {
            let k = k as u64;
            if w == 0.0 || x > k || k - x > n - m {
                continue;
            }
            let joint = w * hypergeom_pmf(n, m, k, x)?;
            px += joint;
            num += joint * (k - x) as f64 / (n - m) as f64;
        }
        if px > 0.0 {
            let d = p_star - num / px;
            acc += px * d * d;
        }
    }
    Ok(acc)
}

/// Exact pass probability of `T(m, 0)` and success probability of the unseen
/// copy given a pass, for the two-point hidden mixture `P(K=1) = p` at `n = m + 1`.
pub fn two_point_posterior(m: u64, p: &BigRational) -> (BigRational, BigRational) {
    let one = BigRational::one();
    let share = p / BigRational::from_integer(BigInt::from(m + 1));
    let pass = &one - p + &share;
    let cond = &share / &pass;
    (pass, cond)
}

/// Largest posterior success probability of the unseen copy over all hidden
/// mixtures on `K in {0..n}` whose pass probability is at least `alpha`,
/// exact. Returns `(worst conditional probability, (1 - alpha)/(m alpha))`.
pub fn worst_case_posterior(
    n: u64,
    m: u64,
    alpha: &BigRational,
) -> Result<(BigRational, BigRational)> {
    if m == 0 || n <= m {
        return Err(Error::param("n", "need n > m >= 1"));
    }
    let zero = BigRational::zero();
    let one = BigRational::one();
    if alpha <= &zero || alpha >= &one {
        return Err(Error::param("alpha", "must lie in (0, 1)"));
    }
    let r = n - m;
    // pass probability a_k and unseen-copy success s_k for each hidden count
    let mut pts: Vec<(BigRational, BigRational)> = Vec::new();
    for k in 0..=r {
        let a = hypergeom_pmf_big(n, m, k, 0)?;
        let s = BigRational::new(BigInt::from(k), BigInt::from(r));
        pts.push((a, s));
    }
    let mut best = zero.clone();
    // extreme points of {q in simplex : sum q a >= alpha} are single points
    // with a >= alpha and two-point mixtures on the constraint boundary
    for (a, s) in &pts {
        if a >= alpha {
            best = best.max(s.clone());
        }
    }
    for (i, (ai, si)) in pts.iter().enumerate() {
        for (aj, sj) in pts.iter().skip(i + 1) {
            let (hi, lo) = if ai >= aj {
                ((ai, si), (aj, sj))
            } else {
                ((aj, sj), (ai, si))
            };
            if !(hi.0 > alpha && lo.0 < alpha) {
                continue;
            }
            // weight w on `lo` with (1-w) a_hi + w a_lo = alpha
            let w = (hi.0 - alpha) / (hi.0 - lo.0);
            let num = (&one - &w) * hi.0 * hi.1 + &w * lo.0 * lo.1;
            best = best.max(num / alpha);
        }
    }
    let bound = (&one - alpha) / (BigRational::from_integer(BigInt::from(m)) * alpha);
    Ok((best, bound))
}

/// Threshold rows for CSV export.
pub fn threshold_table(m: u64, p_values: &[f64], alpha: f64) -> Result<Vec<(f64, u64, i64)>> {
    p_values
        .iter()
        .map(|&p| {
            Ok((
                p,
                percent_point_upper(m, p, alpha)?,
                percent_point_lower(m, p, alpha)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `Phi(-1)`, the tail that makes the threshold multiplier exactly 1.
    const BETA_ONE_SIGMA: f64 = 0.158_655_253_931_457_07;

    fn tail_by_enumeration(m: u32, p: f64, x: u32) -> f64 {
        let mut t = 0.0;
        for mask in 0u32..(1 << m) {
            let ones = mask.count_ones();
            if ones >= x {
                t += p.powi(ones as i32) * (1.0 - p).powi((m - ones) as i32);
            }
        }
        t
    }

    #[test]
    fn tail_examples() {
        assert!((binom_tail_upper(2, 0.5, 2) - 0.25).abs() < 1e-15);
        assert_eq!(binom_tail_upper(7, 0.3, 0), 1.0);
        assert!((binom_tail_upper(10, 0.5, 9) - 11.0 / 1024.0).abs() < 1e-15);
        assert!((binom_tail_upper(10, 0.5, 9) - tail_by_enumeration(10, 0.5, 9)).abs() < 1e-15);
    }

    #[test]
    fn tails_match_enumeration() {
        for m in 1..=12u32 {
            for &p in &[0.1, 0.37, 0.5, 0.9] {
                for x in 0..=m + 1 {
                    let a = binom_tail_upper(m as u64, p, x as u64);
                    let b = tail_by_enumeration(m, p, x);
                    assert!((a - b).abs() < 1e-13, "m={m} p={p} x={x}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn percent_point_examples() {
        assert_eq!(percent_point_upper(10, 0.0, 0.05).unwrap(), 1);
        assert_eq!(percent_point_upper(10, 0.5, 0.05).unwrap(), 9);
        assert_eq!(percent_point_upper(10, 0.5, 0.0005).unwrap(), 11);
        assert_eq!(percent_point_lower(10, 0.5, 0.05).unwrap(), 1);
        assert_eq!(percent_point_lower(10, 0.5, 0.0005).unwrap(), -1);
    }

    #[test]
    fn inverse_normal_examples() {
        assert_eq!(inv_norm_cdf(0.5).unwrap(), 0.0);
        assert!((inv_norm_cdf(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((upper_quantile(BETA_ONE_SIGMA).unwrap() - 1.0).abs() < 1e-12);
        assert!(inv_norm_cdf(0.0).is_err());
        assert!(inv_norm_cdf(1.0).is_err());
    }

    #[test]
    fn inverse_normal_round_trip() {
        for i in 1..1000 {
            let q = i as f64 / 1000.0;
            let x = inv_norm_cdf(q).unwrap();
            assert!((norm_cdf(x) - q).abs() < 1e-12, "q={q}");
        }
        for e in 3..300 {
            let q = 10f64.powi(-e);
            let x = inv_norm_cdf(q).unwrap();
            assert!(((norm_cdf(x) - q) / q).abs() < 1e-9, "q={q}");
        }
    }

    #[test]
    fn two_sided_region_example() {
        let spec = TestSpec {
            m: 100,
            p_star: 0.5,
            alpha: 0.05,
            beta_tail: BETA_ONE_SIGMA,
            kind: TestKind::TwoSided,
        };
        let (lo, hi) = spec.region().unwrap();
        assert!((lo - 45.0).abs() < 1e-9 && (hi.unwrap() - 55.0).abs() < 1e-9);
        assert!(run_test_t(&spec, 50).unwrap().pass);
        assert!(run_test_t(&spec, 45).unwrap().pass);
        assert!(run_test_t(&spec, 55).unwrap().pass);
        assert!(!run_test_t(&spec, 56).unwrap().pass);
        assert!(!run_test_t(&spec, 44).unwrap().pass);
        let c = run_test_t(&spec, 50).unwrap().conclusion.unwrap();
        let w = (1.0 + upper_quantile(0.05).unwrap()) * 0.5 / 10.0;
        assert!((c.lower - (0.5 - w)).abs() < 1e-12);
    }

    #[test]
    fn one_sided_has_no_upper_limit() {
        let spec = TestSpec {
            m: 100,
            p_star: 0.5,
            alpha: 0.05,
            beta_tail: BETA_ONE_SIGMA,
            kind: TestKind::OneSided,
        };
        assert!(run_test_t(&spec, 100).unwrap().pass);
        assert!(!run_test_t(&spec, 44).unwrap().pass);
    }

    #[test]
    fn degenerate_targets_rejected() {
        for p in [0.0, 1.0] {
            let spec = TestSpec {
                m: 10,
                p_star: p,
                alpha: 0.05,
                beta_tail: 0.1,
                kind: TestKind::TwoSided,
            };
            assert!(run_test_t(&spec, 5).is_err());
        }
    }

    #[test]
    fn zero_test_examples() {
        assert!(run_test_zero(10, 0, 0.05).unwrap().pass);
        assert!(!run_test_zero(10, 1, 0.05).unwrap().pass);
        assert!((run_test_zero(100, 0, 0.05).unwrap().bound - 0.19).abs() < 1e-12);
    }

    #[test]
    fn hypergeometric_examples() {
        assert_eq!(hypergeom_pmf_exact(4, 2, 2, 1).unwrap(), Ratio::new(2, 3));
        assert_eq!(hypergeom_pmf_exact(9, 3, 0, 0).unwrap(), Ratio::new(1, 1));
        let total: Ratio<u128> = (0..=3)
            .map(|x| hypergeom_pmf_exact(10, 4, 3, x).unwrap())
            .sum();
        assert_eq!(total, Ratio::new(1, 1));
        assert_eq!(hypergeom_variance_exact(4, 2, 2).unwrap(), Ratio::new(1, 3));
        assert_eq!(hypergeom_variance(7, 3, 0).unwrap(), 0.0);
        assert!(hypergeom_variance(100, 50, 50).unwrap() <= 12.5);
    }

    #[test]
    fn large_n_float_path_is_normalized() {
        let total: f64 = (0..=40)
            .map(|x| hypergeom_pmf(200, 40, 90, x).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soundness_constant_examples() {
        let c = soundness_constant(200, 100, 0.5, 0.05, 0.5).unwrap();
        assert!((c - 0.5 / 0.05f64.sqrt()).abs() < 1e-12);
        let c = soundness_constant(200, 100, 0.5, 0.05, BETA_ONE_SIGMA).unwrap();
        assert!((c - 1.5 / 0.05f64.sqrt()).abs() < 1e-9);
        assert!((c - 6.708).abs() < 1e-3);
        assert!(soundness_constant(100, 100, 0.5, 0.05, 0.1).is_err());
        let a = soundness_constant(300, 100, 0.5, 0.05, 0.1).unwrap();
        let b = soundness_constant(150, 100, 0.5, 0.05, 0.1).unwrap();
        assert!(b > a);
    }

    #[test]
    fn two_point_posterior_boundary_is_tight() {
        let m = 20u64;
        let alpha = BigRational::new(BigInt::from(1), BigInt::from(20));
        let one = BigRational::one();
        let p = (&one - &alpha) * BigRational::new(BigInt::from(m + 1), BigInt::from(m));
        let (pass, cond) = two_point_posterior(m, &p);
        assert_eq!(pass, alpha);
        assert_eq!(
            cond,
            (&one - &alpha) / (BigRational::from_integer(BigInt::from(m)) * &alpha)
        );
    }
}
