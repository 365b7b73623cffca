//! Eight-group self-test of the two-qubit target `(|0,+> + |1,->)/sqrt 2`.
//!
//! `8m` copies are shuffled into eight groups of `m`. Each group measures one
//! pair of settings and records the average outcome product:
//!
//! | group | site 1 | site 2 |
//! |-------|--------|--------|
//! | 1     | X      | Z      |
//! | 2     | Z      | X      |
//! | 3     | A(0)   | Z      |
//! | 4     | A(0)   | X      |
//! | 5     | A(1)   | Z      |
//! | 6     | A(1)   | X      |
//! | 7     | X      | X      |
//! | 8     | Z      | Z      |
//!
//! Groups 1 and 2 must be all `+1`; `avg3 + avg4` and `avg5 - avg6` must reach
//! `sqrt 2 - c1/sqrt m`; `|avg7 + avg8|` must stay within `c1/sqrt m`.

use std::f64::consts::SQRT_2;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::extraction::EpsilonSet;
use crate::hilbert::{outcome_distribution, Outcome, Setting};
use crate::seed::{SeedTree, StreamFamily, DOMAIN_ASSIGN, DOMAIN_COPY};
use crate::stats::{norm_sf, upper_quantile};

pub const TEST2_SCHEMA: &str = "mbqc-selftest/test2-report/1";

/// Settings on (site 1, site 2) for the eight groups.
pub const GROUP_SETTINGS: [(Setting, Setting); 8] = [
    (Setting::X, Setting::Z),
    (Setting::Z, Setting::X),
    (Setting::A0, Setting::Z),
    (Setting::A0, Setting::X),
    (Setting::A1, Setting::Z),
    (Setting::A1, Setting::X),
    (Setting::X, Setting::X),
    (Setting::Z, Setting::Z),
];

/// Outcome-product sums per group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Test2Tally {
    pub sums: [i64; 8],
    pub counts: [u64; 8],
}

impl Test2Tally {
    pub fn record(&mut self, group: usize, a: Outcome, b: Outcome) {
        self.sums[group] += (a.sign() * b.sign()) as i64;
        self.counts[group] += 1;
    }

    pub fn add_group(&mut self, group: usize, sum: i64, count: u64) {
        self.sums[group] += sum;
        self.counts[group] += count;
    }

    pub fn averages(&self) -> [f64; 8] {
        let mut a = [0.0; 8];
        for g in 0..8 {
            if self.counts[g] > 0 {
                a[g] = self.sums[g] as f64 / self.counts[g] as f64;
            }
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Test2Verdicts {
    pub xz_all_plus: bool,
    pub zx_all_plus: bool,
    pub a0_bound: bool,
    pub a1_bound: bool,
    pub xx_zz_bound: bool,
}

impl Test2Verdicts {
    pub fn all(&self) -> bool {
        self.xz_all_plus && self.zx_all_plus && self.a0_bound && self.a1_bound && self.xx_zz_bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Test2Statistics {
    /// `avg3 + avg4`, ideally `sqrt 2`.
    pub a0_combination: f64,
    /// `avg5 - avg6`, ideally `sqrt 2`.
    pub a1_combination: f64,
    /// `avg7 + avg8`, ideally 0.
    pub xx_zz_combination: f64,
    /// `c1 / sqrt m`.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: usize,
    pub site1: Setting,
    pub site2: Setting,
    pub copies: u64,
    pub product_sum: i64,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Test2Report {
    pub schema: String,
    pub device: String,
    pub m: u64,
    pub c1: f64,
    pub seed: u64,
    pub groups: Vec<GroupSummary>,
    pub statistics: Test2Statistics,
    pub verdicts: Test2Verdicts,
    pub pass: bool,
    pub epsilon_constants: EpsilonConstants,
    /// Premise levels certified by a pass; absent when the test failed.
    pub epsilons: Option<EpsilonSet>,
}

/// `c'` and `c''` in `eps2 = eps3 = c'/m`, `eps4 = eps5 = c''/sqrt m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonConstants {
    pub c_prime: f64,
    pub c_double_prime: f64,
    pub alpha: f64,
}

impl EpsilonConstants {
    /// Defaults at significance `alpha`.
    ///
    /// An all-`+1` group of `m` products passes with probability at most
    /// `(1 - eps/2)^m <= exp(-m eps/2)`, which is below `alpha` once
    /// `eps >= 2 ln(1/alpha)/m`. Each probabilistic statistic is a sum of two
    /// group averages with variance at most `2/m`, so a device whose mean sits
    /// `(c1 + sqrt 2 z_alpha)/sqrt m` below target passes with probability
    /// about `alpha`.
    pub fn for_alpha(c1: f64, alpha: f64) -> Result<Self> {
        let z = upper_quantile(alpha)?;
        Ok(Self {
            c_prime: 2.0 * (1.0 / alpha).ln(),
            c_double_prime: c1 + SQRT_2 * z,
            alpha,
        })
    }
}

pub fn evaluate(tally: &Test2Tally, m: u64, c1: f64) -> (Test2Statistics, Test2Verdicts) {
    let a = tally.averages();
    let tol = c1 / (m as f64).sqrt();
    let stats = Test2Statistics {
        a0_combination: a[2] + a[3],
        a1_combination: a[4] - a[5],
        xx_zz_combination: a[6] + a[7],
        tolerance: tol,
    };
    let all_plus = |g: usize| tally.counts[g] > 0 && tally.sums[g] == tally.counts[g] as i64;
    let verdicts = Test2Verdicts {
        xz_all_plus: all_plus(0),
        zx_all_plus: all_plus(1),
        a0_bound: stats.a0_combination >= SQRT_2 - tol,
        a1_bound: stats.a1_combination >= SQRT_2 - tol,
        xx_zz_bound: stats.xx_zz_combination.abs() <= tol,
    };
    (stats, verdicts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Test2Options {
    pub m: u64,
    pub c1: f64,
    pub seed: u64,
    pub alpha: f64,
}

impl Test2Options {
    pub fn new(m: u64, c1: f64, seed: u64) -> Self {
        Self {
            m,
            c1,
            seed,
            alpha: 0.05,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::param("m", "must be at least 1"));
        }
        if !(self.c1 > 0.0) || !self.c1.is_finite() {
            return Err(Error::param("c1", format!("{} is not positive", self.c1)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param(
                "alpha",
                format!("{} is not in (0, 1)", self.alpha),
            ));
        }
        Ok(())
    }
}

pub fn build_report(
    device_label: &str,
    tally: &Test2Tally,
    opts: &Test2Options,
) -> Result<Test2Report> {
    let (statistics, verdicts) = evaluate(tally, opts.m, opts.c1);
    let averages = tally.averages();
    let groups = (0..8)
        .map(|g| GroupSummary {
            group: g + 1,
            site1: GROUP_SETTINGS[g].0,
            site2: GROUP_SETTINGS[g].1,
            copies: tally.counts[g],
            product_sum: tally.sums[g],
            average: averages[g],
        })
        .collect();
    let pass = verdicts.all();
    let constants = EpsilonConstants::for_alpha(opts.c1, opts.alpha)?;
    let epsilons = if pass {
        Some(epsilon_levels(opts.m, &constants))
    } else {
        None
    };
    Ok(Test2Report {
        schema: TEST2_SCHEMA.to_string(),
        device: device_label.to_string(),
        m: opts.m,
        c1: opts.c1,
        seed: opts.seed,
        groups,
        statistics,
        verdicts,
        pass,
        epsilon_constants: constants,
        epsilons,
    })
}

/// Random split of `8m` copy indices into eight groups of `m`.
pub fn assign_groups(m: u64, seed: u64) -> Vec<Vec<u64>> {
    let mut copies: Vec<u64> = (0..8 * m).collect();
    let mut rng = SeedTree::new(seed).rng(&[DOMAIN_ASSIGN]);
    copies.shuffle(&mut rng);
    copies.chunks(m as usize).map(<[u64]>::to_vec).collect()
}

/// Samples outcome pairs for one copy.
enum PairSampler {
    /// Exact joint distribution, one uniform draw per copy.
    Table(Vec<(Outcome, Outcome, f64)>),
    /// Prepare and measure through the device.
    Simulate,
}

fn pair_sampler(device: &DeviceModel, settings: (Setting, Setting)) -> Result<PairSampler> {
    if device.has_noise() {
        return Ok(PairSampler::Simulate);
    }
    let Some(ens) = device.ensemble() else {
        return Ok(PairSampler::Simulate);
    };
    let mut table = [[0.0f64; 2]; 2];
    let a = device.observable(0, settings.0);
    let b = device.observable(1, settings.1);
    for (w, s) in &ens {
        for (o, p) in outcome_distribution(s, &[(0, a), (1, b)])? {
            table[o[0].bit()][o[1].bit()] += w * p;
        }
    }
    let mut out = Vec::with_capacity(4);
    for x in 0..2 {
        for y in 0..2 {
            out.push((Outcome::from_bit(x), Outcome::from_bit(y), table[x][y]));
        }
    }
    Ok(PairSampler::Table(out))
}

fn sample_pair(
    device: &DeviceModel,
    sampler: &PairSampler,
    settings: (Setting, Setting),
    family: &StreamFamily,
    copy: u64,
) -> Result<i64> {
    let mut rng = family.stream(copy);
    let (a, b) = match sampler {
        PairSampler::Table(t) => {
            let u: f64 = rand::Rng::random(&mut rng);
            let mut acc = 0.0;
            let mut pick = (t[3].0, t[3].1);
            for &(x, y, p) in t {
                acc += p;
                if u < acc {
                    pick = (x, y);
                    break;
                }
            }
            pick
        }
        PairSampler::Simulate => {
            let state = device.prepare_copy(copy, &mut rng)?;
            let (a, post) = device.measure(&state, 0, settings.0, &mut rng)?;
            let (b, _) = device.measure(&post, 1, settings.1, &mut rng)?;
            (a, b)
        }
    };
    Ok((a.sign() * b.sign()) as i64)
}

/// Runs the eight-group test on a two-site device.
///
/// Copy `c` in group `g` draws from ChaCha20 stream `c` under the key of path
/// `[DOMAIN_COPY, g]`; copies run in parallel and the integer tallies make
/// the result independent of scheduling.
pub fn run_test2(device: &DeviceModel, m: u64, c1: f64, seed: u64) -> Result<Test2Report> {
    run_test2_with(device, &Test2Options::new(m, c1, seed))
}

pub fn run_test2_with(device: &DeviceModel, opts: &Test2Options) -> Result<Test2Report> {
    opts.validate()?;
    if device.num_sites() != 2 {
        return Err(Error::Dimension(format!(
            "the eight-group test needs a two-site device, got {} sites",
            device.num_sites()
        )));
    }
    device.ensure_available(8 * opts.m)?;
    let groups = assign_groups(opts.m, opts.seed);
    let tree = SeedTree::new(opts.seed);
    let mut tally = Test2Tally::default();
    for (g, copies) in groups.iter().enumerate() {
        let settings = GROUP_SETTINGS[g];
        let sampler = pair_sampler(device, settings)?;
        if matches!(sampler, PairSampler::Table(_)) {
            device.note_prepared(copies.len() as u64);
        }
        let family = tree.family(&[DOMAIN_COPY, g as u64]);
        let sum = copies
            .par_iter()
            .map(|&c| sample_pair(device, &sampler, settings, &family, c))
            .try_reduce(|| 0i64, |x, y| Ok(x + y))?;
        tally.add_group(g, sum, copies.len() as u64);
    }
    build_report(device.label(), &tally, opts)
}

/// Exact probability that an i.i.d. device passes both all-`+1` groups.
pub fn deterministic_pass_probability(device: &DeviceModel, m: u64) -> Result<f64> {
    let ens = device
        .ensemble()
        .ok_or_else(|| Error::param("device", "preparation is not i.i.d."))?;
    let mut total = 1.0;
    for &(a, b) in &GROUP_SETTINGS[..2] {
        let oa = device.observable(0, a);
        let ob = device.observable(1, b);
        let mut plus = 0.0;
        for (w, s) in &ens {
            for (o, p) in outcome_distribution(s, &[(0, oa), (1, ob)])? {
                if o[0] == o[1] {
                    plus += w * p;
                }
            }
        }
        total *= plus.min(1.0).powf(m as f64);
    }
    Ok(total)
}

/// `(eps1..eps5)` certified by a passed report.
pub fn epsilons_from_report(
    report: &Test2Report,
    constants: &EpsilonConstants,
) -> Result<EpsilonSet> {
    if !report.pass {
        return Err(Error::FailedReport(
            "premise levels exist only for passed reports",
        ));
    }
    Ok(epsilon_levels(report.m, constants))
}

pub fn epsilon_levels(m: u64, k: &EpsilonConstants) -> EpsilonSet {
    let mf = m as f64;
    let e4 = k.c_double_prime / mf.sqrt();
    EpsilonSet {
        e1: 2.0 * e4,
        e2: k.c_prime / mf,
        e3: k.c_prime / mf,
        e4,
        e5: e4,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// One inequality of the `avg3 + avg4` type on its own.
    SingleInequality,
    /// All three probabilistic inequalities of `tests` independent runs jointly.
    Joint { tests: u32 },
    /// Union bound over the `4n` one-sided checks of an `n`-site graph test,
    /// each allowed to fail with probability `(1 - beta)/(4n)`.
    Union { sites: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c1: f64,
    pub beta_accept: f64,
    pub mode: CalibrationMode,
    /// `c1 / sqrt(ln n)` in union mode.
    pub c4: Option<f64>,
    /// Normal-approximation pass probability of the honest device at `c1`.
    pub predicted_pass: f64,
}

/// Honest pass probability of the three probabilistic inequalities of one run.
///
/// In units of `1/sqrt m`, `avg3 + avg4` and `avg5 - avg6` have variance 1
/// and `avg7 + avg8` has variance 2 for the ideal device.
pub fn honest_pass_probability(c1: f64) -> f64 {
    let one_sided = 1.0 - norm_sf(c1);
    let two_sided = 1.0 - 2.0 * norm_sf(c1 / SQRT_2);
    one_sided * one_sided * two_sided
}

pub fn calibrate_c1(beta_accept: f64, mode: CalibrationMode) -> Result<Calibration> {
    if !(beta_accept > 0.0 && beta_accept < 1.0) {
        return Err(Error::param(
            "beta",
            format!("{beta_accept} is not in (0, 1)"),
        ));
    }
    let (c1, c4, predicted) = match mode {
        CalibrationMode::SingleInequality => {
            let c1 = upper_quantile(1.0 - beta_accept)?;
            (c1, None, 1.0 - norm_sf(c1))
        }
        CalibrationMode::Joint { tests } => {
            if tests == 0 {
                return Err(Error::param("tests", "must be at least 1"));
            }
            let f = |c: f64| honest_pass_probability(c).powi(tests as i32);
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            while f(hi) < beta_accept {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < beta_accept {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (hi, None, f(hi))
        }
        CalibrationMode::Union { sites } => {
            if sites == 0 {
                return Err(Error::param("sites", "must be at least 1"));
            }
            let t = (1.0 - beta_accept) / (4.0 * sites as f64);
            let c1 = upper_quantile(t)?.max(SQRT_2 * upper_quantile(t)?);
            let c4 = if sites > 1 {
                Some(c1 / (sites as f64).ln().sqrt())
            } else {
                None
            };
            (c1, c4, honest_pass_probability(c1).powi(sites as i32))
        }
    };
    Ok(Calibration {
        c1,
        beta_accept,
        mode,
        c4,
        predicted_pass: predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{DeviceRegistry, Target};

    #[test]
    fn groups_partition_all_copies() {
        let g = assign_groups(5, 9);
        assert_eq!(g.len(), 8);
        let mut all: Vec<u64> = g.concat();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn honest_deterministic_groups_are_exact() {
        let d = DeviceModel::honest_bell();
        let r = run_test2(&d, 50, 2.0, 1).unwrap();
        assert_eq!(r.groups[0].average, 1.0);
        assert_eq!(r.groups[1].average, 1.0);
        assert_eq!(deterministic_pass_probability(&d, 1000).unwrap(), 1.0);
    }

    #[test]
    fn reports_are_reproducible() {
        let d = DeviceModel::honest_bell();
        let a = serde_json::to_string(&run_test2(&d, 200, 2.0, 5).unwrap()).unwrap();
        let b = serde_json::to_string(&run_test2(&d, 200, 2.0, 5).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&run_test2(&d, 200, 2.0, 6).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn simulated_and_tabled_paths_agree_on_honest_device() {
        use crate::device::RandomRotation;
        use std::sync::Arc;
        // zero-angle noise forces the simulation path without changing the device
        let d = DeviceModel::honest_bell().with_noise(Arc::new(RandomRotation { max_angle: 0.0 }));
        let r = run_test2(&d, 100, 3.0, 2).unwrap();
        assert_eq!(r.groups[0].average, 1.0);
        assert_eq!(r.groups[1].average, 1.0);
        assert_eq!(d.copies_prepared(), 800);
    }

    #[test]
    fn product_device_fails_deterministic_group() {
        let d = DeviceRegistry::default()
            .build("product", &Target::bell())
            .unwrap();
        let p = deterministic_pass_probability(&d, 20).unwrap();
        assert!((p - 2f64.powi(-40)).abs() < 1e-20);
        let r = run_test2(&d, 20, 2.0, 3).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn maximally_mixed_detected() {
        let d = DeviceRegistry::default()
            .build("maximally-mixed", &Target::bell())
            .unwrap();
        let p = deterministic_pass_probability(&d, 10).unwrap();
        assert!(p <= 0.75f64.powi(10));
    }

    #[test]
    fn copy_limit_fails_fast() {
        let d = DeviceModel::honest_bell().with_copy_limit(10);
        assert!(matches!(
            run_test2(&d, 2, 2.0, 0),
            Err(Error::InsufficientCopies { .. })
        ));
        assert_eq!(d.copies_prepared(), 0);
    }

    #[test]
    fn epsilon_examples() {
        let k = EpsilonConstants {
            c_prime: 4.0,
            c_double_prime: 1.0,
            alpha: 0.05,
        };
        let e = epsilon_levels(100, &k);
        assert!((e.e4 - 0.1).abs() < 1e-15 && (e.e1 - 0.2).abs() < 1e-15);
        assert!((epsilon_levels(400, &k).e2 - 0.01).abs() < 1e-15);
        let big = epsilon_levels(1 << 40, &k);
        assert!(big.e1 < 1e-5 && big.e2 < 1e-11);
    }

    #[test]
    fn failed_reports_have_no_epsilons() {
        let d = DeviceRegistry::default()
            .build("product", &Target::bell())
            .unwrap();
        let r = run_test2(&d, 20, 2.0, 3).unwrap();
        assert!(r.epsilons.is_none());
        assert!(epsilons_from_report(&r, &r.epsilon_constants).is_err());
    }

    #[test]
    fn calibration_is_monotone() {
        let mut last = 0.0;
        for b in [0.5, 0.8, 0.9, 0.99, 0.999] {
            let c = calibrate_c1(b, CalibrationMode::Joint { tests: 1 }).unwrap();
            assert!(c.c1 > last);
            assert!((c.predicted_pass - b).abs() < 1e-9);
            last = c.c1;
        }
    }

    #[test]
    fn union_calibration_grows_like_sqrt_log() {
        let c = |n| {
            calibrate_c1(0.9, CalibrationMode::Union { sites: n })
                .unwrap()
                .c1
        };
        let ratio = c(1 << 20) / c(1 << 10);
        // sqrt(ln 2^20 / ln 2^10) = sqrt 2, approached slowly from below
        assert!(ratio > 1.2 && ratio < SQRT_2, "ratio {ratio}");
        assert!(
            calibrate_c1(0.9, CalibrationMode::Union { sites: 9 })
                .unwrap()
                .predicted_pass
                >= 0.9
        );
    }
}
