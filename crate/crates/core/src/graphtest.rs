//! Self-test of a k-colorable graph state.
//!
//! `c3 m + 1` copies are split at random into `c3` groups of `m` and one
//! final copy, with `c3 = k + 8 sum_i l_i`. Group `i` (for `i < k`) runs the
//! stabilizer test of color `i`. Every non-conflict subset then gets a block
//! of eight groups: a Z-measurement reduction leaves a Bell pair between each
//! subset vertex and a partner neighbor, and the pairs run the eight-group
//! test. The final copy is kept as the certified state.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belltest::{
    build_report, epsilon_levels, Test2Options, Test2Report, Test2Tally, GROUP_SETTINGS,
};
use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::extraction::{delta_chain, DeltaChain, EpsilonSet};
use crate::graphs::{ColoredGraph, PartitionSource};
use crate::hilbert::{self, outcome_distribution, Matrix, Outcome, PureState, Setting};
use crate::seed::{SeedTree, StreamFamily, DOMAIN_ASSIGN, DOMAIN_COPY};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;

pub const TEST4_SCHEMA: &str = "mbqc-selftest/test4-report/1";

/// Per-copy view of a preparation plus measurement device. The observables
/// act on the state as returned by `prepare`.
pub trait CopyBackend: Sync {
    fn label(&self) -> &str;
    fn num_sites(&self) -> usize;
    fn ensure_available(&self, count: u64) -> Result<()>;
    fn copies_prepared(&self) -> u64;
    fn prepare(&self, copy: u64, rng: &mut ChaCha20Rng) -> Result<PureState>;
    fn measure(
        &self,
        copy: u64,
        state: &PureState,
        site: usize,
        setting: Setting,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Outcome, PureState)>;
    fn observable(&self, copy: u64, site: usize, setting: Setting) -> Matrix;
}

impl CopyBackend for DeviceModel {
    fn label(&self) -> &str {
        DeviceModel::label(self)
    }

    fn num_sites(&self) -> usize {
        DeviceModel::num_sites(self)
    }

    fn ensure_available(&self, count: u64) -> Result<()> {
        DeviceModel::ensure_available(self, count)
    }

    fn copies_prepared(&self) -> u64 {
        DeviceModel::copies_prepared(self)
    }

    fn prepare(&self, copy: u64, rng: &mut ChaCha20Rng) -> Result<PureState> {
        self.prepare_copy(copy, rng)
    }

    fn measure(
        &self,
        _copy: u64,
        state: &PureState,
        site: usize,
        setting: Setting,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Outcome, PureState)> {
        DeviceModel::measure(self, state, site, setting, rng)
    }

    fn observable(&self, _copy: u64, site: usize, setting: Setting) -> Matrix {
        DeviceModel::observable(self, site, setting).clone()
    }
}

/// Measurement plan that reduces a graph state to disjoint Bell pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reduction {
    pub color: usize,
    pub subset_index: usize,
    pub subset: Vec<usize>,
    pub partners: Vec<usize>,
    /// Same-color vertices outside the subset, measured first.
    pub first_round: Vec<usize>,
    /// Other-color vertices except the partners.
    pub second_round: Vec<usize>,
}

impl Reduction {
    pub fn plan(graph: &ColoredGraph, color: usize, subset_index: usize) -> Result<Self> {
        let subset = graph
            .partitions()
            .get(color)
            .and_then(|p| p.get(subset_index))
            .cloned()
            .ok_or_else(|| {
                Error::InvalidGraph(format!("color {color} has no subset {subset_index}"))
            })?;
        Self::for_subset(graph, color, subset_index, subset)
    }

    pub fn for_subset(
        graph: &ColoredGraph,
        color: usize,
        subset_index: usize,
        subset: Vec<usize>,
    ) -> Result<Self> {
        for (x, &a) in subset.iter().enumerate() {
            if a >= graph.n() || graph.color(a) != color {
                return Err(Error::InvalidGraph(format!(
                    "vertex {a} is not of color {color}"
                )));
            }
            for &b in &subset[x + 1..] {
                if let Some(c) = graph.common_neighbor(a, b) {
                    return Err(Error::InvalidGraph(format!(
                        "vertices {a} and {b} share neighbor {c}; subset violates the non-conflict condition"
                    )));
                }
            }
        }
        let partners = graph.choose_partners(&subset)?;
        let in_subset: BTreeSet<usize> = subset.iter().copied().collect();
        let keep: BTreeSet<usize> = in_subset.iter().chain(&partners).copied().collect();
        let first_round = graph
            .color_class(color)
            .into_iter()
            .filter(|v| !in_subset.contains(v))
            .collect();
        let second_round = (0..graph.n())
            .filter(|&v| graph.color(v) != color && !keep.contains(&v))
            .collect();
        Ok(Self {
            color,
            subset_index,
            subset,
            partners,
            first_round,
            second_round,
        })
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.subset
            .iter()
            .copied()
            .zip(self.partners.iter().copied())
            .collect()
    }

    /// Measures both rounds in Z' and, after each round, applies Z' to every
    /// still-unmeasured neighbor of a `-1` outcome.
    pub fn reduce(
        &self,
        device: &dyn CopyBackend,
        graph: &ColoredGraph,
        copy: u64,
        state: PureState,
        rng: &mut ChaCha20Rng,
    ) -> Result<PureState> {
        let mut s = state;
        let mut measured = vec![false; graph.n()];
        for round in [&self.first_round, &self.second_round] {
            let mut flipped = Vec::new();
            for &v in round.iter() {
                let (o, post) = device.measure(copy, &s, v, Setting::Z, rng)?;
                s = post;
                measured[v] = true;
                if o == Outcome::Minus {
                    flipped.push(v);
                }
            }
            for v in flipped {
                for &w in graph.neighbors(v) {
                    if !measured[w] {
                        s = s.apply_local(w, &device.observable(copy, w, Setting::Z))?;
                    }
                }
            }
        }
        Ok(s)
    }
}

/// Post-reduction state of one copy.
#[derive(Debug, Clone)]
pub struct ReducedCopy {
    pub copy: u64,
    pub state: PureState,
    pub pairs: Vec<(usize, usize)>,
}

impl ReducedCopy {
    /// Fidelity of pair `k` with the target Bell state.
    pub fn pair_fidelity(&self, k: usize) -> Result<f64> {
        let (a, b) = self.pairs[k];
        let rho = self.state.reduced_density(&[a, b])?;
        let phi = hilbert::bell_target();
        let v = nalgebra::DVector::from_column_slice(phi.amps());
        Ok((v.adjoint() * rho * v)[(0, 0)].re)
    }
}

/// Runs the reduction on `8m` fresh copies of the device.
pub fn run_color_protocol(
    device: &DeviceModel,
    graph: &ColoredGraph,
    color: usize,
    subset_index: usize,
    m: u64,
    seed: u64,
) -> Result<Vec<ReducedCopy>> {
    let plan = Reduction::plan(graph, color, subset_index)?;
    device.ensure_available(8 * m)?;
    let family = SeedTree::new(seed).family(&[DOMAIN_COPY, color as u64, subset_index as u64]);
    (0..8 * m)
        .into_par_iter()
        .map(|copy| {
            let mut rng = family.stream(copy);
            let state = device.prepare_copy(copy, &mut rng)?;
            Ok(ReducedCopy {
                copy,
                state: plan.reduce(device, graph, copy, state, &mut rng)?,
                pairs: plan.pairs(),
            })
        })
        .collect()
}

/// Z' on every vertex of another color, X' on `x_color`.
fn stabilizer_settings(graph: &ColoredGraph, x_color: usize) -> Vec<Setting> {
    (0..graph.n())
        .map(|v| {
            if graph.color(v) == x_color {
                Setting::X
            } else {
                Setting::Z
            }
        })
        .collect()
}

/// Whether every `x_color` vertex's X outcome matches the product of its
/// neighbors' Z outcomes.
fn stabilizer_holds(graph: &ColoredGraph, x_color: usize, outcomes: &[Outcome]) -> bool {
    (0..graph.n())
        .filter(|&v| graph.color(v) == x_color)
        .all(|v| {
            let predicted = graph
                .neighbors(v)
                .iter()
                .fold(Outcome::Plus, |acc, &w| acc.times(outcomes[w]));
            outcomes[v] == predicted
        })
}

fn stabilizer_copy(
    device: &dyn CopyBackend,
    graph: &ColoredGraph,
    settings: &[Setting],
    x_color: usize,
    family: &StreamFamily,
    copy: u64,
) -> Result<bool> {
    let mut rng = family.stream(copy);
    let mut s = device.prepare(copy, &mut rng)?;
    let mut outcomes = Vec::with_capacity(settings.len());
    for (v, &setting) in settings.iter().enumerate() {
        let (o, post) = device.measure(copy, &s, v, setting, &mut rng)?;
        s = post;
        outcomes.push(o);
    }
    Ok(stabilizer_holds(graph, x_color, &outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilizerVerdict {
    pub color: usize,
    /// 1-based group index within the run.
    pub group: usize,
    pub copies: u64,
    pub failed_copies: u64,
    pub pass: bool,
}

fn stabilizer_group(
    device: &dyn CopyBackend,
    graph: &ColoredGraph,
    x_color: usize,
    copies: &[u64],
    family: &StreamFamily,
) -> Result<u64> {
    let settings = stabilizer_settings(graph, x_color);
    copies
        .par_iter()
        .map(|&c| {
            stabilizer_copy(device, graph, &settings, x_color, family, c).map(|ok| u64::from(!ok))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Stabilizer test of one color on `m` fresh copies.
pub fn run_stabilizer_test(
    device: &DeviceModel,
    graph: &ColoredGraph,
    x_color: usize,
    m: u64,
    seed: u64,
) -> Result<StabilizerVerdict> {
    check_device(device, graph)?;
    device.ensure_available(m)?;
    let copies: Vec<u64> = (0..m).collect();
    let family = SeedTree::new(seed).family(&[DOMAIN_COPY, x_color as u64]);
    let failed = stabilizer_group(device, graph, x_color, &copies, &family)?;
    Ok(StabilizerVerdict {
        color: x_color,
        group: x_color + 1,
        copies: m,
        failed_copies: failed,
        pass: failed == 0,
    })
}

/// `Tr[sigma (I - P'_i)]` for the pass projector of color `x_color`'s
/// stabilizer test, built from the device's fixed observables.
pub fn stabilizer_rejection(
    state: &PureState,
    device: &DeviceModel,
    graph: &ColoredGraph,
    x_color: usize,
) -> Result<f64> {
    copy_rejection(device, 0, state, graph, x_color)
}

fn copy_rejection(
    device: &dyn CopyBackend,
    copy: u64,
    state: &PureState,
    graph: &ColoredGraph,
    x_color: usize,
) -> Result<f64> {
    let settings = stabilizer_settings(graph, x_color);
    let owned: Vec<Matrix> = settings
        .iter()
        .enumerate()
        .map(|(v, &s)| device.observable(copy, v, s))
        .collect();
    let obs: Vec<(usize, &Matrix)> = owned.iter().enumerate().collect();
    let mut pass = 0.0;
    for (outcomes, p) in outcome_distribution(state, &obs)? {
        if stabilizer_holds(graph, x_color, &outcomes) {
            pass += p;
        }
    }
    Ok((1.0 - pass).max(0.0))
}

/// Exact per-copy failure probability of an i.i.d. device.
pub fn stabilizer_failure_probability(
    device: &DeviceModel,
    graph: &ColoredGraph,
    x_color: usize,
) -> Result<f64> {
    let ens = device
        .ensemble()
        .ok_or_else(|| Error::param("device", "preparation is not i.i.d."))?;
    let mut total = 0.0;
    for (w, s) in &ens {
        total += w * stabilizer_rejection(s, device, graph, x_color)?;
    }
    Ok(total)
}

/// Group layout of a run; group numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub colors: usize,
    pub subset_counts: Vec<usize>,
    pub c3: usize,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub color: usize,
    pub subset_index: usize,
    pub first_group: usize,
    pub last_group: usize,
}

pub fn schedule(graph: &ColoredGraph) -> Schedule {
    let k = graph.num_colors();
    let l = graph.subset_counts();
    let mut blocks = Vec::new();
    let mut before = 0;
    for (color, &li) in l.iter().enumerate() {
        for j in 1..=li {
            blocks.push(Block {
                color,
                subset_index: j - 1,
                first_group: k + 8 * (j - 1 + before) + 1,
                last_group: k + 8 * (j + before),
            });
        }
        before += li;
    }
    Schedule {
        colors: k,
        c3: k + 8 * before,
        subset_counts: l,
        blocks,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub n: usize,
    pub edges: usize,
    pub colors: usize,
    pub subset_counts: Vec<usize>,
    pub c3: usize,
    pub partition_source: PartitionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub color: usize,
    pub subset_index: usize,
    pub groups: [usize; 2],
    pub subset: Vec<usize>,
    pub partners: Vec<usize>,
    pub pairs: Vec<Test2Report>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteBound {
    pub site: usize,
    pub color: usize,
    pub partner: usize,
    pub pass: bool,
    pub epsilons: Option<EpsilonSet>,
    pub chain: Option<DeltaChain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalCopy {
    pub copy: u64,
    /// `Tr[sigma (I - P'_i)]` per color.
    pub rejection: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Test4Report {
    pub schema: String,
    pub device: String,
    pub graph: GraphSummary,
    pub m: u64,
    pub c1: f64,
    pub alpha: f64,
    pub seed: u64,
    pub stabilizer: Vec<StabilizerVerdict>,
    pub subsets: Vec<SubsetResult>,
    pub sites: Vec<SiteBound>,
    pub final_copy: FinalCopy,
    pub copies_consumed: u64,
    pub pass: bool,
}

fn check_device(device: &dyn CopyBackend, graph: &ColoredGraph) -> Result<()> {
    if device.num_sites() != graph.n() {
        return Err(Error::Dimension(format!(
            "device has {} sites, graph has {} vertices",
            device.num_sites(),
            graph.n()
        )));
    }
    Ok(())
}

/// Assigns copy indices to `c3` groups of `m` plus the final copy.
pub fn assign_copies(c3: usize, m: u64, seed: u64) -> (Vec<Vec<u64>>, u64) {
    let total = c3 as u64 * m + 1;
    let mut copies: Vec<u64> = (0..total).collect();
    let mut rng = SeedTree::new(seed).rng(&[DOMAIN_ASSIGN]);
    copies.shuffle(&mut rng);
    let last = copies.pop().expect("at least one copy");
    (
        copies.chunks(m as usize).map(<[u64]>::to_vec).collect(),
        last,
    )
}

fn subset_block(
    device: &dyn CopyBackend,
    graph: &ColoredGraph,
    plan: &Reduction,
    groups: &[Vec<u64>],
    first_group0: usize,
    tree: &SeedTree,
) -> Result<Vec<Test2Tally>> {
    let pairs = plan.pairs();
    let mut tallies = vec![Test2Tally::default(); pairs.len()];
    for g in 0..8 {
        let (sa, sb) = GROUP_SETTINGS[g];
        let group0 = first_group0 + g;
        let family = tree.family(&[DOMAIN_COPY, group0 as u64]);
        let copies = &groups[group0];
        let sums = copies
            .par_iter()
            .map(|&c| -> Result<Vec<i64>> {
                let mut rng = family.stream(c);
                let state = device.prepare(c, &mut rng)?;
                let mut s = plan.reduce(device, graph, c, state, &mut rng)?;
                let mut out = Vec::with_capacity(pairs.len());
                for &(a, b) in &pairs {
                    let (oa, post) = device.measure(c, &s, a, sa, &mut rng)?;
                    let (ob, post) = device.measure(c, &post, b, sb, &mut rng)?;
                    s = post;
                    out.push((oa.sign() * ob.sign()) as i64);
                }
                Ok(out)
            })
            .try_reduce(
                || vec![0i64; pairs.len()],
                |mut x, y| {
                    for (p, q) in x.iter_mut().zip(y) {
                        *p += q;
                    }
                    Ok(x)
                },
            )?;
        for (t, s) in tallies.iter_mut().zip(sums) {
            t.add_group(g, s, copies.len() as u64);
        }
    }
    Ok(tallies)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Test4Options {
    pub m: u64,
    pub c1: f64,
    pub seed: u64,
    pub alpha: f64,
}

impl Test4Options {
    pub fn new(m: u64, c1: f64, seed: u64) -> Self {
        Self {
            m,
            c1,
            seed,
            alpha: 0.05,
        }
    }
}

pub fn run_test4(
    device: &DeviceModel,
    graph: &ColoredGraph,
    m: u64,
    c1: f64,
    seed: u64,
) -> Result<Test4Report> {
    run_test4_with(device, graph, &Test4Options::new(m, c1, seed))
}

pub fn run_test4_with(
    device: &DeviceModel,
    graph: &ColoredGraph,
    opts: &Test4Options,
) -> Result<Test4Report> {
    run_test4_on(device, graph, opts)
}

/// graph test through an arbitrary per-copy backend.
pub fn run_test4_on(
    device: &dyn CopyBackend,
    graph: &ColoredGraph,
    opts: &Test4Options,
) -> Result<Test4Report> {
    let violations = graph.validate();
    if let Some(v) = violations.first() {
        return Err(Error::InvalidGraph(format!(
            "{} violation(s), first: {v:?}",
            violations.len()
        )));
    }
    check_device(device, graph)?;
    let t2 = Test2Options {
        m: opts.m,
        c1: opts.c1,
        seed: opts.seed,
        alpha: opts.alpha,
    };
    if opts.m == 0 {
        return Err(Error::param("m", "must be at least 1"));
    }
    let sched = schedule(graph);
    let plans: Vec<Reduction> = sched
        .blocks
        .iter()
        .map(|b| Reduction::plan(graph, b.color, b.subset_index))
        .collect::<Result<_>>()?;
    let total = sched.c3 as u64 * opts.m + 1;
    device.ensure_available(total)?;
    let before = device.copies_prepared();

    let (groups, final_index) = assign_copies(sched.c3, opts.m, opts.seed);
    let tree = SeedTree::new(opts.seed);

    let mut stabilizer = Vec::with_capacity(sched.colors);
    for color in 0..sched.colors {
        let family = tree.family(&[DOMAIN_COPY, color as u64]);
        let failed = stabilizer_group(device, graph, color, &groups[color], &family)?;
        stabilizer.push(StabilizerVerdict {
            color,
            group: color + 1,
            copies: opts.m,
            failed_copies: failed,
            pass: failed == 0,
        });
    }

    let mut subsets = Vec::with_capacity(plans.len());
    let mut sites = Vec::new();
    for (block, plan) in sched.blocks.iter().zip(&plans) {
        let tallies = subset_block(device, graph, plan, &groups, block.first_group - 1, &tree)?;
        let mut pairs = Vec::with_capacity(tallies.len());
        for ((a, b), tally) in plan.pairs().into_iter().zip(&tallies) {
            let label = format!("{} site {a} partner {b}", device.label());
            let report = build_report(&label, tally, &t2)?;
            let eps = report
                .pass
                .then(|| epsilon_levels(opts.m, &report.epsilon_constants));
            sites.push(SiteBound {
                site: a,
                color: block.color,
                partner: b,
                pass: report.pass,
                epsilons: eps,
                chain: eps.as_ref().map(delta_chain),
            });
            pairs.push(report);
        }
        subsets.push(SubsetResult {
            color: block.color,
            subset_index: block.subset_index,
            groups: [block.first_group, block.last_group],
            subset: plan.subset.clone(),
            partners: plan.partners.clone(),
            pass: pairs.iter().all(|r| r.pass),
            pairs,
        });
    }
    sites.sort_by_key(|s| s.site);

    let family = tree.family(&[DOMAIN_COPY, sched.c3 as u64]);
    let mut rng = family.stream(final_index);
    let sigma = device.prepare(final_index, &mut rng)?;
    let rejection = (0..sched.colors)
        .map(|c| copy_rejection(device, final_index, &sigma, graph, c))
        .collect::<Result<Vec<_>>>()?;

    let pass = stabilizer.iter().all(|s| s.pass) && subsets.iter().all(|s| s.pass);
    Ok(Test4Report {
        schema: TEST4_SCHEMA.to_string(),
        device: device.label().to_string(),
        graph: GraphSummary {
            n: graph.n(),
            edges: graph.edges().len(),
            colors: sched.colors,
            subset_counts: sched.subset_counts.clone(),
            c3: sched.c3,
            partition_source: graph.partition_source().clone(),
        },
        m: opts.m,
        c1: opts.c1,
        alpha: opts.alpha,
        seed: opts.seed,
        stabilizer,
        subsets,
        sites,
        final_copy: FinalCopy {
            copy: final_index,
            rejection,
        },
        copies_consumed: device.copies_prepared() - before,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSummary {
    /// `c2 (ln n / m)^(1/4)`.
    pub delta: f64,
    pub c2: f64,
    /// `alpha / m`.
    pub rejection_threshold: f64,
    pub rejection: Vec<f64>,
    /// Colors whose final-copy rejection exceeds the threshold.
    pub violations: Vec<usize>,
    /// Largest chain bound over all sites, `max(delta1, delta2)`.
    pub worst_site_delta: f64,
}

/// `c2 (ln n / m)^(1/4)`; real arguments so the formula can be probed off the integers.
pub fn precision_level(c2: f64, n: f64, m: f64) -> f64 {
    c2 * (n.ln() / m).powf(0.25)
}

pub fn precision_summary(report: &Test4Report, alpha: f64, c2: f64) -> Result<PrecisionSummary> {
    if !report.pass {
        return Err(Error::FailedReport(
            "precision levels exist only for passed reports",
        ));
    }
    let threshold = alpha / report.m as f64;
    let violations = report
        .final_copy
        .rejection
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > threshold)
        .map(|(c, _)| c)
        .collect();
    let worst = report
        .sites
        .iter()
        .filter_map(|s| s.chain.map(|c| c.d1.max(c.d2)))
        .fold(0.0, f64::max);
    Ok(PrecisionSummary {
        delta: precision_level(c2, report.graph.n as f64, report.m as f64),
        c2,
        rejection_threshold: threshold,
        rejection: report.final_copy.rejection.clone(),
        violations,
        worst_site_delta: worst,
    })
}

#[derive(Debug, Serialize)]
struct SiteRow {
    site: usize,
    color: usize,
    partner: usize,
    pass: bool,
    e1: Option<f64>,
    e2: Option<f64>,
    e3: Option<f64>,
    e4: Option<f64>,
    e5: Option<f64>,
    delta1: Option<f64>,
    delta2: Option<f64>,
}

/// Per-site ε/δ table as CSV.
pub fn site_table_csv(report: &Test4Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &report.sites {
        let e = s.epsilons;
        w.serialize(SiteRow {
            site: s.site,
            color: s.color,
            partner: s.partner,
            pass: s.pass,
            e1: e.map(|e| e.e1),
            e2: e.map(|e| e.e2),
            e3: e.map(|e| e.e3),
            e4: e.map(|e| e.e4),
            e5: e.map(|e| e.e5),
            delta1: s.chain.map(|c| c.d1),
            delta2: s.chain.map(|c| c.d2),
        })
        .map_err(|e| Error::Protocol(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Protocol(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Protocol(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{DeviceRegistry, Target};
    use crate::graphs::{path_graph, triangular_lattice, Greedy};

    fn triangle() -> ColoredGraph {
        ColoredGraph::new(3, &[(0, 1), (1, 2), (0, 2)], vec![0, 1, 2])
            .partitioned_by(&Greedy)
            .unwrap()
    }

    fn honest(g: &ColoredGraph) -> DeviceModel {
        DeviceModel::honest_graph(g.n(), g.edges()).unwrap()
    }

    #[test]
    fn triangle_reduction_yields_bell_pair() {
        let g = triangle();
        let d = honest(&g);
        for copy in run_color_protocol(&d, &g, 0, 0, 4, 7).unwrap() {
            assert!((copy.pair_fidelity(0).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn path_reduction_yields_bell_pair() {
        let g = path_graph(3).unwrap();
        let plan = Reduction::for_subset(&g, 0, 0, vec![0]).unwrap();
        assert_eq!(plan.partners, vec![1]);
        assert_eq!(plan.first_round, vec![2]);
        let d = honest(&g);
        let fam = SeedTree::new(3).family(&[9]);
        for c in 0..16 {
            let mut rng = fam.stream(c);
            let s = d.prepare_copy(c, &mut rng).unwrap();
            let r = plan.reduce(&d, &g, 0, s, &mut rng).unwrap();
            let copy = ReducedCopy {
                copy: c,
                state: r,
                pairs: plan.pairs(),
            };
            assert!((copy.pair_fidelity(0).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_vertex_has_no_partner() {
        let g = ColoredGraph::new(1, &[], vec![0])
            .partitioned_by(&Greedy)
            .unwrap();
        assert!(Reduction::plan(&g, 0, 0).is_err());
    }

    #[test]
    fn honest_stabilizers_pass_exactly() {
        let g = triangular_lattice(3, 3).unwrap();
        let d = honest(&g);
        for c in 0..g.num_colors() {
            assert!(stabilizer_failure_probability(&d, &g, c).unwrap() < 1e-12);
        }
    }

    #[test]
    fn z_flip_is_caught_deterministically() {
        let g = triangle();
        let d = DeviceRegistry::default()
            .build(
                "zflip:2",
                &Target {
                    n: 3,
                    edges: g.edges().to_vec(),
                },
            )
            .unwrap();
        assert!((stabilizer_failure_probability(&d, &g, 2).unwrap() - 1.0).abs() < 1e-12);
        let v = run_stabilizer_test(&d, &g, 2, 10, 1).unwrap();
        assert_eq!(v.failed_copies, 10);
    }

    #[test]
    fn mixed_site_fails_half_the_time() {
        let g = path_graph(2).unwrap();
        let psi = hilbert::make_graph_state(2, g.edges()).unwrap();
        let ens = crate::device::site_depolarized_ensemble(&psi, 0, 1.0).unwrap();
        let prep = std::sync::Arc::new(crate::device::Mixture::new(ens).unwrap());
        let obs = vec![crate::device::SiteObservables::ideal(); 2];
        let d = DeviceModel::new("mixed site 0", prep, obs).unwrap();
        let p = stabilizer_failure_probability(&d, &g, 0).unwrap();
        assert!((p - 0.5).abs() < 1e-12, "{p}");
    }

    #[test]
    fn schedule_matches_three_color_indices() {
        let g = triangular_lattice(3, 3).unwrap();
        let s = schedule(&g);
        let l = &s.subset_counts;
        assert_eq!(s.c3, 3 + 8 * l.iter().sum::<usize>());
        for b in &s.blocks {
            let offset: usize = l[..b.color].iter().sum();
            let k = b.subset_index + 1;
            // black subsets occupy groups 4+8(k-1) ..= 3+8k, later colors shift by 8 l
            assert_eq!(b.first_group, 4 + 8 * (offset + k - 1));
            assert_eq!(b.last_group, 3 + 8 * (offset + k));
        }
    }

    #[test]
    fn honest_lattice_passes_and_counts_copies() {
        let g = triangular_lattice(2, 2).unwrap();
        let d = honest(&g);
        let r = run_test4(&d, &g, 30, 4.0, 11).unwrap();
        assert_eq!(r.copies_consumed, r.graph.c3 as u64 * 30 + 1);
        assert!(r.stabilizer.iter().all(|s| s.pass));
        assert!(r.final_copy.rejection.iter().all(|&x| x < 1e-12));
        assert!(
            r.pass,
            "{:?}",
            r.subsets.iter().map(|s| s.pass).collect::<Vec<_>>()
        );
        let t = precision_summary(&r, 0.05, 1.0).unwrap();
        assert!(t.violations.is_empty());
        let csv = site_table_csv(&r).unwrap();
        assert_eq!(csv.lines().count(), g.n() + 1);
    }

    #[test]
    fn runs_are_reproducible() {
        let g = triangular_lattice(2, 2).unwrap();
        let d = honest(&g);
        let a = serde_json::to_string(&run_test4(&d, &g, 10, 3.0, 2).unwrap()).unwrap();
        let b = serde_json::to_string(&run_test4(&d, &g, 10, 3.0, 2).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_edge_fails() {
        let g = triangle();
        let d = DeviceRegistry::default()
            .build(
                "missing-edge:0",
                &Target {
                    n: 3,
                    edges: g.edges().to_vec(),
                },
            )
            .unwrap();
        let worst = (0..3)
            .map(|c| stabilizer_failure_probability(&d, &g, c).unwrap())
            .fold(0.0, f64::max);
        assert!(worst >= 0.5 - 1e-12);
        assert!(!run_test4(&d, &g, 10, 3.0, 5).unwrap().pass);
    }

    #[test]
    fn precision_level_examples() {
        let e = std::f64::consts::E;
        // ln n / m = 1
        assert!((precision_level(1.7, e, 1.0) - 1.7).abs() < 1e-15);
        assert!((precision_level(1.0, 9.0, 1e4) - 0.121_75).abs() < 1e-4);
    }
}
