//! Certification of adaptive single-site measurements and of the tested state.
//!
//! An adaptive plan measures sites in a fixed order; the basis of step `j` is a
//! function of the earlier outcomes. The plan is realized as a unitary
//! `W_n = H_n V_n ... H_1 V_1` on the untrusted register plus one trusted
//! ancilla per step, each starting in `|+>`: `V_j` applies the chosen
//! observable controlled on ancilla `j`, and reading the ancillas in the
//! computational basis after the Hadamards yields the outcomes (bit 0 is `+1`).
//!
//! "Trace norm" in the state bounds is the trace distance `||A||_1 / 2`, the
//! normalization under which `T^2 <= 1 - F` holds.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceModel, SiteObservables};
use crate::error::{Error, Result};
use crate::extraction::{spectral_norm, InequalityCheck};
use crate::graphs::ColoredGraph;
use crate::hilbert::{
    self, c, embed_operator, gates, kron, projector, Matrix, Outcome, PureState, Setting, C64, ZERO,
};

/// Largest `untrusted * trusted` dimension for the dense `W_n`.
pub const LAMBDA_DIM_LIMIT: usize = 1 << 12;
pub const DEFAULT_OBSERVABLE_COUNT: f64 = 4.0;
const CHECK_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Basis {
    I,
    X,
    Z,
    A0,
    A1,
}

impl Basis {
    pub fn setting(self) -> Option<Setting> {
        match self {
            Basis::I => None,
            Basis::X => Some(Setting::X),
            Basis::Z => Some(Setting::Z),
            Basis::A0 => Some(Setting::A0),
            Basis::A1 => Some(Setting::A1),
        }
    }

    fn matrix(self, obs: &SiteObservables) -> Matrix {
        match self.setting() {
            Some(s) => obs.get(s).clone(),
            None => Matrix::identity(obs.dim(), obs.dim()),
        }
    }
}

/// Basis rule of one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum StepRule {
    Fixed {
        basis: Basis,
    },
    /// `even` if the earlier steps in `depends_on` have even parity, else `odd`.
    Parity {
        depends_on: Vec<usize>,
        even: Basis,
        odd: Basis,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptivePlan {
    /// Site measured at each step.
    pub order: Vec<usize>,
    pub rules: Vec<StepRule>,
}

impl AdaptivePlan {
    pub fn new(order: Vec<usize>, rules: Vec<StepRule>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &s in &order {
            if s >= n || seen[s] {
                return Err(Error::param(
                    "order",
                    format!("{order:?} is not a permutation of the sites"),
                ));
            }
            seen[s] = true;
        }
        if rules.len() != n {
            return Err(Error::param(
                "rules",
                format!("{} rules for {n} steps", rules.len()),
            ));
        }
        for (j, r) in rules.iter().enumerate() {
            if let StepRule::Parity { depends_on, .. } = r {
                if let Some(&bad) = depends_on.iter().find(|&&d| d >= j) {
                    return Err(Error::param(
                        "rules",
                        format!("step {j} depends on step {bad}, which is not earlier"),
                    ));
                }
            }
        }
        Ok(Self { order, rules })
    }

    pub fn fixed(bases: &[Basis]) -> Self {
        Self {
            order: (0..bases.len()).collect(),
            rules: bases
                .iter()
                .map(|&basis| StepRule::Fixed { basis })
                .collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.order.len()
    }

    /// Basis of `step` given the outcomes of all earlier steps.
    pub fn basis(&self, step: usize, history: &[Outcome]) -> Basis {
        match &self.rules[step] {
            StepRule::Fixed { basis } => *basis,
            StepRule::Parity {
                depends_on,
                even,
                odd,
            } => {
                let parity = depends_on.iter().fold(0, |p, &d| p ^ history[d].bit());
                if parity == 0 {
                    *even
                } else {
                    *odd
                }
            }
        }
    }
}

fn bits_of(k: usize, n: usize) -> Vec<Outcome> {
    (0..n)
        .map(|j| Outcome::from_bit((k >> (n - 1 - j)) & 1))
        .collect()
}

/// Dense realization of an adaptive plan.
#[derive(Debug, Clone)]
pub struct Lambda {
    pub steps: usize,
    pub untrusted_dim: usize,
    /// `W_0 = I, W_1, ..., W_n` on `untrusted ⊗ trusted` (trusted index minor).
    pub prefixes: Vec<Matrix>,
    /// Kraus operator per outcome string; step 0 is the most significant bit.
    pub kraus: Vec<Matrix>,
}

impl Lambda {
    /// POVM element `K_k† K_k` of outcome string `k`.
    pub fn povm(&self, k: usize) -> Matrix {
        self.kraus[k].adjoint() * &self.kraus[k]
    }

    pub fn povm_sum(&self, outcomes: &[usize]) -> Matrix {
        let d = self.untrusted_dim;
        outcomes
            .iter()
            .fold(Matrix::zeros(d, d), |acc, &k| acc + self.povm(k))
    }

    pub fn distribution(&self, rho: &Matrix) -> Vec<f64> {
        self.kraus
            .iter()
            .map(|k| (k * rho * k.adjoint()).trace().re.max(0.0))
            .collect()
    }
}

pub fn build_lambda(observables: &[SiteObservables], plan: &AdaptivePlan) -> Result<Lambda> {
    let n = plan.steps();
    if observables.len() != n {
        return Err(Error::Dimension(format!(
            "plan has {n} steps, device has {} sites",
            observables.len()
        )));
    }
    let dims: Vec<usize> = observables.iter().map(SiteObservables::dim).collect();
    let d: usize = dims.iter().product();
    let t = 1usize << n;
    if d * t > LAMBDA_DIM_LIMIT {
        return Err(Error::DimensionLimit {
            dim: d * t,
            limit: LAMBDA_DIM_LIMIT,
        });
    }
    let total = d * t;
    let mut prefixes = vec![Matrix::identity(total, total)];
    for j in 0..n {
        let site = plan.order[j];
        // controlled step: block-diagonal over trusted basis states
        let mut v = Matrix::zeros(total, total);
        for tb in 0..t {
            let hist = bits_of(tb, n);
            let op = if hist[j] == Outcome::Minus {
                embed_operator(
                    &dims,
                    site,
                    &plan.basis(j, &hist).matrix(&observables[site]),
                )
            } else {
                Matrix::identity(d, d)
            };
            for u in 0..d {
                for w in 0..d {
                    let x = op[(u, w)];
                    if x != ZERO {
                        v[(u * t + tb, w * t + tb)] = x;
                    }
                }
            }
        }
        let mut tdims = vec![2usize; n];
        tdims.insert(0, d);
        let h = embed_operator(&tdims, j + 1, &gates::hadamard());
        let next = h * v * prefixes.last().expect("W_0 present");
        prefixes.push(next);
    }
    let wn = prefixes.last().expect("W_n present");
    let amp = c(1.0 / (t as f64).sqrt());
    let kraus = (0..t)
        .map(|k| {
            Matrix::from_fn(d, d, |u, w| {
                let mut acc = ZERO;
                for tb in 0..t {
                    acc += wn[(u * t + k, w * t + tb)];
                }
                acc * amp
            })
        })
        .collect();
    Ok(Lambda {
        steps: n,
        untrusted_dim: d,
        prefixes,
        kraus,
    })
}

/// Outcome distribution of the plan by step-by-step projective measurement.
pub fn sequential_distribution(
    state: &PureState,
    observables: &[SiteObservables],
    plan: &AdaptivePlan,
) -> Result<Vec<f64>> {
    let n = plan.steps();
    let mut out = vec![0.0; 1 << n];
    let mut stack: Vec<(Vec<Outcome>, Vec<C64>)> = vec![(Vec::new(), state.amps().to_vec())];
    while let Some((hist, v)) = stack.pop() {
        let j = hist.len();
        if j == n {
            let k = hist.iter().fold(0usize, |acc, o| (acc << 1) | o.bit());
            out[k] += hilbert::norm_sqr(&v);
            continue;
        }
        let site = plan.order[j];
        let m = plan.basis(j, &hist).matrix(&observables[site]);
        for o in [Outcome::Plus, Outcome::Minus] {
            let w = hilbert::apply_on_site(state.dims(), &v, site, &projector(&m, o));
            if hilbert::norm_sqr(&w) > 1e-30 {
                let mut h = hist.clone();
                h.push(o);
                stack.push((h, w));
            }
        }
    }
    Ok(out)
}

/// Closed forms of the certification bounds.
pub fn povm_bound(n: usize, delta: f64, s: f64) -> f64 {
    2.0 * s * n as f64 * delta
}

pub fn state_error_bound(n: usize, delta: f64, alpha: f64, m: f64) -> f64 {
    6.0 * n as f64 * delta + 3.0 * alpha / m
}

pub fn incorrect_accept_bound(n: usize, delta: f64, alpha: f64, m: f64) -> f64 {
    14.0 * n as f64 * delta + 3.0 * alpha / m
}

/// Per-site unitary frames `U_i` used as the local isometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameChoice {
    /// The trusted computational frame.
    Identity,
    /// Diagonalizes each site's Z' and fixes the phase so `<1|X'|0>` is real.
    Aligned,
}

fn aligned_frame(obs: &SiteObservables) -> Matrix {
    let eig = SymmetricEigen::new(obs.z.clone());
    let (ip, im) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let vp = eig.eigenvectors.column(ip).into_owned();
    let mut vm = eig.eigenvectors.column(im).into_owned();
    let cross = (vm.adjoint() * &obs.x * &vp)[(0, 0)];
    if cross.norm() > 1e-12 {
        vm *= cross / cross.norm();
    }
    let mut u = Matrix::zeros(2, 2);
    for k in 0..2 {
        u[(0, k)] = vp[k].conj();
        u[(1, k)] = vm[k].conj();
    }
    u
}

pub fn frames(observables: &[SiteObservables], choice: FrameChoice) -> Result<Vec<Matrix>> {
    observables
        .iter()
        .enumerate()
        .map(|(site, o)| {
            if o.dim() != 2 {
                return Err(Error::Dimension(format!(
                    "certification frames need qubit sites; site {site} has dimension {}",
                    o.dim()
                )));
            }
            Ok(match choice {
                FrameChoice::Identity => Matrix::identity(2, 2),
                FrameChoice::Aligned => aligned_frame(o),
            })
        })
        .collect()
}

/// `||U_i D'_s U_i† - D_s||` for `s` in X, Z, A(0), A(1), per site.
pub fn site_deviations(observables: &[SiteObservables], frames: &[Matrix]) -> Vec<[f64; 4]> {
    observables
        .iter()
        .zip(frames)
        .map(|(o, u)| {
            Setting::ALL.map(|s| spectral_norm(&(u * o.get(s) * u.adjoint() - s.ideal())))
        })
        .collect()
}

fn kron_all(ms: &[Matrix]) -> Matrix {
    ms.iter()
        .skip(1)
        .fold(ms[0].clone(), |acc, m| kron(&acc, m))
}

/// Projector onto passing outcomes of color `x_color`'s stabilizer test.
pub fn stabilizer_projector(
    graph: &ColoredGraph,
    observables: &[SiteObservables],
    x_color: usize,
) -> Matrix {
    let n = graph.n();
    let proj: Vec<[Matrix; 2]> = (0..n)
        .map(|v| {
            let s = if graph.color(v) == x_color {
                Setting::X
            } else {
                Setting::Z
            };
            let m = observables[v].get(s);
            [projector(m, Outcome::Plus), projector(m, Outcome::Minus)]
        })
        .collect();
    let d: usize = observables.iter().map(SiteObservables::dim).product();
    let mut total = Matrix::zeros(d, d);
    for k in 0..(1usize << n) {
        let bits = bits_of(k, n);
        let holds = (0..n).filter(|&v| graph.color(v) == x_color).all(|v| {
            let predicted = graph
                .neighbors(v)
                .iter()
                .fold(Outcome::Plus, |acc, &w| acc.times(bits[w]));
            bits[v] == predicted
        });
        if holds {
            let factors: Vec<Matrix> = (0..n).map(|v| proj[v][bits[v].bit()].clone()).collect();
            total += kron_all(&factors);
        }
    }
    total
}

fn density(device: &DeviceModel) -> Result<Matrix> {
    let ens = device
        .ensemble()
        .ok_or_else(|| Error::param("device", "preparation is not i.i.d."))?;
    let d: usize = device.dims().iter().product();
    let mut rho = Matrix::zeros(d, d);
    for (w, s) in &ens {
        let v = nalgebra::DVector::from_column_slice(s.amps());
        rho += (&v * v.adjoint()) * c(*w);
    }
    Ok(rho)
}

fn hermitian_eigenvalues(m: &Matrix) -> Vec<f64> {
    let h = (m + m.adjoint()) * c(0.5);
    SymmetricEigen::new(h).eigenvalues.iter().copied().collect()
}

/// `||A||_1 / 2` for Hermitian `A`.
pub fn trace_distance(a: &Matrix) -> f64 {
    0.5 * hermitian_eigenvalues(a)
        .iter()
        .map(|x| x.abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    pub alpha: f64,
    pub m: u64,
    pub s: f64,
    pub frames: FrameChoice,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            m: 100,
            s: DEFAULT_OBSERVABLE_COUNT,
            frames: FrameChoice::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDiagnostics {
    /// `||U sigma U† - |G><G| ||_1 / 2`.
    pub trace_distance: f64,
    pub infidelity: f64,
    /// `sum_i Tr[(I - P_i) U sigma U†]`.
    pub stabilizer_sum: f64,
    /// `Tr[sigma (I - P'_i)]` per color.
    pub rejection: Vec<f64>,
    /// Smallest eigenvalue of `sum_i (I - P_i) - (I - |G><G|)`.
    pub projector_gap: f64,
    /// Whether every rejection is at most `alpha / m`.
    pub premise_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub n: usize,
    pub alpha: f64,
    pub m: u64,
    pub s: f64,
    pub frames: FrameChoice,
    pub delta: f64,
    pub site_deviations: Vec<[f64; 4]>,
    pub povm_deviation: f64,
    pub accept_difference: f64,
    pub state: StateDiagnostics,
    /// Trace distance itself against the unsquared bound; reported, not asserted.
    pub unsquared_state_bound_holds: bool,
    pub checks: Vec<InequalityCheck>,
    pub all_hold: bool,
}

fn check(stage: &str, name: &str, measured: f64, bound: f64) -> InequalityCheck {
    InequalityCheck {
        stage: stage.to_string(),
        name: name.to_string(),
        measured,
        bound,
        holds: measured <= bound + CHECK_SLACK,
        note: None,
    }
}

/// `||U W'_j U† - W_j|| <= s j delta` for every prefix.
pub fn verify_prefix_bounds(
    observables: &[SiteObservables],
    plan: &AdaptivePlan,
    frame: &[Matrix],
    s: f64,
) -> Result<(f64, Vec<InequalityCheck>)> {
    let n = plan.steps();
    let delta = max_deviation(&site_deviations(observables, frame));
    let primed = build_lambda(observables, plan)?;
    let ideal = build_lambda(&vec![SiteObservables::ideal(); n], plan)?;
    let t = 1usize << n;
    let u = kron(&kron_all(frame), &Matrix::identity(t, t));
    let checks = (1..=n)
        .map(|j| {
            let dev = spectral_norm(&(&u * &primed.prefixes[j] * u.adjoint() - &ideal.prefixes[j]));
            check(
                "prefix",
                &format!("U W'_{j} U† - W_{j}"),
                dev,
                s * j as f64 * delta,
            )
        })
        .collect();
    Ok((delta, checks))
}

fn max_deviation(devs: &[[f64; 4]]) -> f64 {
    devs.iter().flatten().copied().fold(0.0, f64::max)
}

/// Parity subsets of outcome strings, one per non-empty set of steps.
pub fn parity_subsets(n: usize) -> Vec<Vec<usize>> {
    (1..(1usize << n))
        .map(|mask| {
            (0..(1usize << n))
                .filter(|k| (k & mask).count_ones() % 2 == 0)
                .collect()
        })
        .collect()
}

/// Evaluates every certification inequality for a qubit device on `graph`.
pub fn certify(
    device: &DeviceModel,
    graph: &ColoredGraph,
    plan: &AdaptivePlan,
    opts: &CertifyOptions,
) -> Result<CertificationReport> {
    if device.has_noise() {
        return Err(Error::param(
            "device",
            "measurement noise leaves no fixed observables",
        ));
    }
    let n = graph.n();
    if device.num_sites() != n || plan.steps() != n {
        return Err(Error::Dimension(format!(
            "device has {} sites, graph {n}, plan {} steps",
            device.num_sites(),
            plan.steps()
        )));
    }
    let obs = device.observables();
    let ideal_obs = vec![SiteObservables::ideal(); n];
    let frame = frames(obs, opts.frames)?;
    let devs = site_deviations(obs, &frame);
    let delta = max_deviation(&devs);
    let mf = opts.m as f64;
    let mut checks = Vec::new();

    let (_, prefix) = verify_prefix_bounds(obs, plan, &frame, opts.s)?;
    checks.extend(prefix);

    let primed = build_lambda(obs, plan)?;
    let ideal = build_lambda(&ideal_obs, plan)?;
    let u = kron_all(&frame);
    let conj = |m: &Matrix| &u * m * u.adjoint();
    let subsets: Vec<Vec<usize>> = (0..(1usize << n))
        .map(|k| vec![k])
        .chain(parity_subsets(n))
        .collect();
    let povm_deviation = subsets
        .iter()
        .map(|s| spectral_norm(&(conj(&primed.povm_sum(s)) - ideal.povm_sum(s))))
        .fold(0.0, f64::max);
    checks.push(check(
        "POVM",
        "max ||U M' U† - M||",
        povm_deviation,
        povm_bound(n, delta, opts.s),
    ));

    let g = hilbert::make_graph_state(n, graph.edges())?;
    let gv = nalgebra::DVector::from_column_slice(g.amps());
    let gg = &gv * gv.adjoint();
    let sigma = density(device)?;
    let us = conj(&sigma);
    let p_out = primed.distribution(&(u.adjoint() * &gg * &u));
    let p_in = ideal.distribution(&gg);
    let l1: f64 = p_out.iter().zip(&p_in).map(|(a, b)| (a - b).abs()).sum();
    checks.push(check(
        "POVM",
        "||U Λ'(U† G U) U† - Λ(G)||_1",
        l1,
        povm_bound(n, delta, opts.s),
    ));

    let trace_dist = trace_distance(&(&us - &gg));
    let fidelity = (gv.adjoint() * &us * &gv)[(0, 0)].re;
    let infidelity = (1.0 - fidelity).max(0.0);
    let d = us.nrows();
    let id = Matrix::identity(d, d);
    let mut stab_sum = 0.0;
    let mut rejection = Vec::new();
    let mut complement = Matrix::zeros(d, d);
    for color in 0..graph.num_colors() {
        let p = stabilizer_projector(graph, &ideal_obs, color);
        let pp = stabilizer_projector(graph, obs, color);
        stab_sum += ((&id - &p) * &us).trace().re;
        rejection.push(((&id - &pp) * &sigma).trace().re.max(0.0));
        complement += &id - &p;
    }
    let gap = hermitian_eigenvalues(&(complement - (&id - &gg)))
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let premise_met = rejection.iter().all(|&r| r <= opts.alpha / mf);
    let rej_sum: f64 = rejection.iter().sum();

    checks.push(check(
        "state",
        "T^2 <= 1 - F",
        trace_dist * trace_dist,
        infidelity,
    ));
    checks.push(check(
        "state",
        "1 - F <= sum_i Tr[(I - P_i) U sigma U†]",
        infidelity,
        stab_sum,
    ));
    checks.push(check("state", "projector inequality gap >= 0", -gap, 0.0));
    checks.push(check(
        "state",
        "T^2 <= 6 n delta + sum_i Tr[sigma (I - P'_i)]",
        trace_dist * trace_dist,
        6.0 * n as f64 * delta + rej_sum,
    ));
    let accept_difference = parity_subsets(n)
        .iter()
        .map(|s| {
            let a = (primed.povm_sum(s) * &sigma).trace().re;
            let b = (ideal.povm_sum(s) * &gg).trace().re;
            (a - b).abs()
        })
        .fold(0.0, f64::max);
    checks.push(check(
        "accept",
        "|Tr M' sigma - Tr M G| <= 2 s n delta + sqrt(6 n delta + sum rejection)",
        accept_difference,
        povm_bound(n, delta, opts.s) + (6.0 * n as f64 * delta + rej_sum).min(1.0).sqrt(),
    ));
    if premise_met {
        checks.push(check(
            "state",
            "T^2 <= 6 n delta + 3 alpha / m",
            trace_dist * trace_dist,
            state_error_bound(n, delta, opts.alpha, mf),
        ));
        let mut stated = check(
            "accept",
            "|Tr M' sigma - Tr M G| <= 14 n delta + 3 alpha / m",
            accept_difference,
            incorrect_accept_bound(n, delta, opts.alpha, mf),
        );
        stated.note = Some("uses the unsquared state bound".to_string());
        checks.push(stated);
    }
    let all_hold = checks.iter().all(|c| c.holds);
    Ok(CertificationReport {
        n,
        alpha: opts.alpha,
        m: opts.m,
        s: opts.s,
        frames: opts.frames,
        delta,
        site_deviations: devs,
        povm_deviation,
        accept_difference,
        state: StateDiagnostics {
            trace_distance: trace_dist,
            infidelity,
            stabilizer_sum: stab_sum,
            rejection,
            projector_gap: gap,
            premise_met,
        },
        unsquared_state_bound_holds: trace_dist
            <= state_error_bound(n, delta, opts.alpha, mf) + CHECK_SLACK,
        checks,
        all_hold,
    })
}
