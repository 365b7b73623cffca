//! Local isometries that swap an untrusted two-site state into trusted qubits,
//! the bound chain from observed correlations to operator deviations, and a
//! dense check of every inequality along that chain.
//!
//! Layout of the extracted space: `[H'1, H'2, a1, a2]`, where `a1`, `a2` are
//! trusted ancilla qubits starting in `|0>` and `|+>`. After the swap the
//! target `(|0,+> + |1,->)/sqrt 2` sits on `(a1, a2)` and the junk on
//! `(H'1, H'2)`.

use std::f64::consts::SQRT_2;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceModel, SiteObservables};
use crate::error::{Error, Result};
use crate::hilbert::{
    self, apply_on_pair, apply_on_site, c, check_binary, gates, kron, kron_vec, unitarity_defect,
    vec_norm, vec_scale, vec_sub, Matrix, PureState, Setting, C64, ZERO,
};

/// Largest extracted-space dimension for dense verification.
pub const DENSE_DIM_LIMIT: usize = 1 << 12;
/// Above this matrix size spectral norms switch to power iteration.
pub const POWER_ITERATION_THRESHOLD: usize = 1 << 10;
pub const POWER_ITERATION_TOL: f64 = 1e-8;
/// Default multiplier on `delta1'` for the four single-observable swap bounds.
pub const DEFAULT_SWAP_SAFETY: f64 = 4.0;

const ISOMETRY_TOL: f64 = 1e-10;

/// Premise levels of the self-testing bound; all non-negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSet {
    /// Shortfall of the CHSH combination from `2 sqrt 2`.
    pub e1: f64,
    /// Shortfall of `<X1 Z2>` from 1.
    pub e2: f64,
    /// Shortfall of `<Z1 X2>` from 1.
    pub e3: f64,
    /// Shortfall of the `A(0)`/`A(1)` correlators from `sqrt 2`.
    pub e4: f64,
    /// `|<X1 X2 + Z1 Z2>|`.
    pub e5: f64,
}

impl EpsilonSet {
    pub fn new(e1: f64, e2: f64, e3: f64, e4: f64, e5: f64) -> Result<Self> {
        let s = Self { e1, e2, e3, e4, e5 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in ["e1", "e2", "e3", "e4", "e5"].iter().zip(self.as_array()) {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(
                    name,
                    format!("{v} is not a finite non-negative number"),
                ));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.e1, self.e2, self.e3, self.e4, self.e5]
    }
}

/// Intermediate and final values of the bound chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaChain {
    pub e1p: f64,
    pub e2p: f64,
    pub e3p: f64,
    pub e4p: f64,
    pub d1p: f64,
    pub d2p: f64,
    /// Bound on the X and Z deviations.
    pub d1: f64,
    /// Bound on the A(0) and A(1) deviations.
    pub d2: f64,
}

pub fn delta_chain(eps: &EpsilonSet) -> DeltaChain {
    let e1p = 2f64.powf(1.25) * eps.e1.sqrt();
    let e2p = SQRT_2 * eps.e2.sqrt();
    let e3p = SQRT_2 * eps.e3.sqrt();
    let e4p = (SQRT_2 * eps.e4 + 0.5 * eps.e5 + eps.e2.sqrt() + eps.e3.sqrt()).sqrt();
    let d1p = 0.5 * (4.0 * e3p + e1p + 2.0 * e2p);
    let d2p = SQRT_2 * d1p + e4p;
    DeltaChain {
        e1p,
        e2p,
        e3p,
        e4p,
        d1p,
        d2p,
        d1: 2.0 * SQRT_2 * d1p,
        d2: SQRT_2 * (d1p + d2p),
    }
}

/// Coefficients of the closed-form bounds
/// `delta1 = sum c_hat_j sqrt(eps_j)` and
/// `delta2 = sum c_bar_j sqrt(eps_j) + sqrt 2 (eps2^1/4 + eps3^1/4)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c_hat: [f64; 3],
    pub c_bar: [f64; 5],
}

impl Default for BoundConstants {
    /// Coefficients from expanding `2 sqrt 2 delta1'` and `sqrt 2 (delta1' + delta2')`,
    /// splitting the square root in `eps4'` term by term.
    fn default() -> Self {
        let c_hat = [2f64.powf(1.75), 4.0, 8.0];
        let k = (1.0 + SQRT_2) / 2.0;
        Self {
            c_hat,
            c_bar: [
                k * c_hat[0],
                k * c_hat[1],
                k * c_hat[2],
                2f64.powf(0.75),
                1.0,
            ],
        }
    }
}

pub fn closed_form_bounds(eps: &EpsilonSet, k: &BoundConstants) -> (f64, f64) {
    let r = eps.as_array().map(f64::sqrt);
    let d1: f64 = (0..3).map(|j| k.c_hat[j] * r[j]).sum();
    let d2: f64 = (0..5).map(|j| k.c_bar[j] * r[j]).sum::<f64>()
        + SQRT_2 * (eps.e2.powf(0.25) + eps.e3.powf(0.25));
    (d1, d2)
}

/// A two-site pure state with fixed observables, ready for extraction.
#[derive(Debug, Clone)]
pub struct PureView {
    pub state: PureState,
    pub observables: [SiteObservables; 2],
}

impl PureView {
    /// Mixed i.i.d. preparations are purified into site 2.
    pub fn from_device(device: &DeviceModel) -> Result<Self> {
        if device.num_sites() != 2 {
            return Err(Error::Dimension(format!(
                "extraction needs a two-site device, got {} sites",
                device.num_sites()
            )));
        }
        if device.has_noise() {
            return Err(Error::param(
                "device",
                "measurement noise leaves no fixed observables",
            ));
        }
        let ens = device
            .ensemble()
            .ok_or_else(|| Error::param("device", "preparation is not i.i.d."))?;
        let dev = if ens.len() == 1 {
            device.clone()
        } else {
            device.purified(1)?
        };
        let state = dev
            .static_state()
            .expect("single component after purification");
        let obs = dev.observables();
        for (site, o) in obs.iter().enumerate() {
            o.validate(site)?;
        }
        Ok(Self {
            state,
            observables: [obs[0].clone(), obs[1].clone()],
        })
    }

    fn apply(&self, site: usize, s: Setting, v: &[C64]) -> Vec<C64> {
        apply_on_site(self.state.dims(), v, site, self.observables[site].get(s))
    }

    fn expect(&self, terms: &[(f64, Setting, Setting)]) -> f64 {
        let psi = self.state.amps();
        let mut acc = 0.0;
        for &(w, a, b) in terms {
            let v = self.apply(1, b, &self.apply(0, a, psi));
            acc += w * hilbert::inner_product(psi, &v).re;
        }
        acc
    }
}

/// Exact premise levels, each clipped at 0.
pub fn measure_epsilons(device: &DeviceModel) -> Result<EpsilonSet> {
    Ok(epsilons_of(&PureView::from_device(device)?))
}

pub fn epsilons_of(view: &PureView) -> EpsilonSet {
    use Setting::*;
    let a0 = view.expect(&[(1.0, A0, Z), (1.0, A0, X)]);
    let a1 = view.expect(&[(1.0, A1, Z), (-1.0, A1, X)]);
    let chsh = view.expect(&[(1.0, A0, X), (1.0, A0, Z), (-1.0, A1, X), (1.0, A1, Z)]);
    EpsilonSet {
        e1: (2.0 * SQRT_2 - chsh).max(0.0),
        e2: (1.0 - view.expect(&[(1.0, X, Z)])).max(0.0),
        e3: (1.0 - view.expect(&[(1.0, Z, X)])).max(0.0),
        e4: (SQRT_2 - a0).max(SQRT_2 - a1).max(0.0),
        e5: view.expect(&[(1.0, X, X), (1.0, Z, Z)]).abs(),
    }
}

fn controlled(o: &Matrix) -> Matrix {
    let d = o.nrows();
    let p0 = Matrix::from_row_slice(2, 2, &[c(1.0), ZERO, ZERO, ZERO]);
    let p1 = Matrix::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, c(1.0)]);
    kron(&Matrix::identity(d, d), &p0) + kron(o, &p1)
}

fn ancilla_hadamard(d: usize) -> Matrix {
    kron(&Matrix::identity(d, d), &gates::hadamard())
}

/// Swap unitaries on `H'_j ⊗ a_j` plus the unnormalized junk vector.
#[derive(Debug, Clone)]
pub struct Isometries {
    /// `CX'1 H CZ'1 H`, ancilla starting in `|0>`.
    pub u1: Matrix,
    /// `H CZ'2 H CX'2`, ancilla starting in `|+>`.
    pub u2: Matrix,
    /// `(sqrt 2/4)(I + Z'1)(I + X'2)|psi'>` on `H'1 ⊗ H'2`.
    pub junk: Vec<C64>,
    pub junk_norm: f64,
}

pub fn build_isometries(device: &DeviceModel) -> Result<Isometries> {
    isometries_of(&PureView::from_device(device)?)
}

pub fn isometries_of(view: &PureView) -> Result<Isometries> {
    for (site, o) in view.observables.iter().enumerate() {
        check_binary(site, o.get(Setting::X))?;
        check_binary(site, o.get(Setting::Z))?;
    }
    let [o1, o2] = &view.observables;
    let (d1, d2) = (o1.dim(), o2.dim());
    let (h1, h2) = (ancilla_hadamard(d1), ancilla_hadamard(d2));
    let u1 = controlled(&o1.x) * &h1 * controlled(&o1.z) * &h1;
    let u2 = &h2 * controlled(&o2.z) * &h2 * controlled(&o2.x);
    for u in [&u1, &u2] {
        let defect = unitarity_defect(u);
        if defect > ISOMETRY_TOL {
            return Err(Error::NotUnitary(defect));
        }
    }
    let psi = view.state.amps();
    let plus_x2 = hilbert::vec_add(psi, &view.apply(1, Setting::X, psi));
    let both = hilbert::vec_add(&plus_x2, &view.apply(0, Setting::Z, &plus_x2));
    let junk = vec_scale(&both, c(SQRT_2 / 4.0));
    let junk_norm = vec_norm(&junk);
    Ok(Isometries {
        u1,
        u2,
        junk,
        junk_norm,
    })
}

/// Spectral norm of `U O' U† - O`; all three are square and conformable.
pub fn operator_deviation(u: &Matrix, o_prime: &Matrix, o_ideal: &Matrix) -> Result<f64> {
    let n = u.nrows();
    if u.ncols() != n || o_prime.shape() != (n, n) || o_ideal.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "operator deviation needs conformable squares, got {:?}, {:?}, {:?}",
            u.shape(),
            o_prime.shape(),
            o_ideal.shape()
        )));
    }
    Ok(spectral_norm(&(u * o_prime * u.adjoint() - o_ideal)))
}

/// Largest singular value; power iteration on `M†M` above the dense threshold.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows().max(m.ncols()) <= POWER_ITERATION_THRESHOLD {
        return m.singular_values().max();
    }
    power_norm(m)
}

pub fn power_norm(m: &Matrix) -> f64 {
    let g = m.adjoint() * m;
    let n = g.ncols();
    // deterministic start with no special alignment
    let mut v =
        nalgebra::DVector::<C64>::from_fn(n, |i, _| c(1.0 + (i as f64 * 0.618_034).fract()));
    v /= c(v.norm());
    let mut last = 0.0;
    for _ in 0..10_000 {
        let w = &g * &v;
        let lambda = w.norm();
        if lambda == 0.0 {
            return 0.0;
        }
        v = w / c(lambda);
        if (lambda - last).abs() <= POWER_ITERATION_TOL * lambda {
            return lambda.sqrt();
        }
        last = lambda;
    }
    last.sqrt()
}

/// One checked inequality: `measured <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub stage: String,
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

const CHECK_SLACK: f64 = 1e-10;

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

/// Deviations of the swapped observables from their trusted counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviations {
    pub x: f64,
    pub z: f64,
    pub a0: f64,
    pub a1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `[re, im]` pairs.
    pub data: Vec<[f64; 2]>,
}

impl From<&Matrix> for MatrixDump {
    fn from(m: &Matrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push([m[(r, c)].re, m[(r, c)].im]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub dims: [usize; 2],
    pub epsilons: EpsilonSet,
    pub chain: DeltaChain,
    pub closed_form: [f64; 2],
    pub junk_norm: f64,
    /// `||U|psi'> - |junk>|target>||`.
    pub swap_residual: f64,
    /// Junk-weighted deviations, compared against `delta1`/`delta2`.
    pub deviations: Deviations,
    /// Plain spectral norms on `a1 ⊗ supp(junk on H'1)`; informational.
    pub restricted_spectral: Deviations,
    pub swap_safety: f64,
    pub checks: Vec<InequalityCheck>,
    pub all_hold: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u1: Option<MatrixDump>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u2: Option<MatrixDump>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionOptions {
    pub swap_safety: f64,
    pub include_matrices: bool,
    pub constants: BoundConstants,
}

impl Default for ExtractionOptions {
    fn default() -> Self {
        Self {
            swap_safety: DEFAULT_SWAP_SAFETY,
            include_matrices: false,
            constants: BoundConstants::default(),
        }
    }
}

pub fn verify_lemma_chain(device: &DeviceModel) -> Result<ExtractionResult> {
    verify_lemma_chain_with(device, &ExtractionOptions::default())
}

/// Evaluates every inequality of the chain with exact left sides.
///
/// Operator deviations use the junk-weighted convention: for
/// `D = U1 O' U1† - O` on `H'1 ⊗ a1` the reported value is
/// `sqrt 2 ||(D ⊗ I)|junk>|target>||`, i.e. the Frobenius norm of
/// `D (sqrt(rho) ⊗ I)` where `rho` is the junk's reduced state on `H'1`.
/// It equals the spectral norm of `D` whenever the junk on `H'1` is a pure
/// unit vector and `D` acts only on the qubit factor.
pub fn verify_lemma_chain_with(
    device: &DeviceModel,
    opts: &ExtractionOptions,
) -> Result<ExtractionResult> {
    let view = PureView::from_device(device)?;
    let [o1, o2] = &view.observables;
    let (d1, d2) = (o1.dim(), o2.dim());
    let total = d1 * d2 * 4;
    if total > DENSE_DIM_LIMIT {
        return Err(Error::DimensionLimit {
            dim: total,
            limit: DENSE_DIM_LIMIT,
        });
    }
    let eps = epsilons_of(&view);
    let chain = delta_chain(&eps);
    let iso = isometries_of(&view)?;
    let psi = view.state.amps();
    use Setting::*;

    let mut checks = Vec::new();

    // single-system state norms
    let x2z2 = view.apply(1, X, &view.apply(1, Z, psi));
    let z2x2 = view.apply(1, Z, &view.apply(1, X, psi));
    checks.push(check(
        "anticommutation",
        "anticommutator of X'2, Z'2 on psi'",
        vec_norm(&hilbert::vec_add(&x2z2, &z2x2)),
        2.0 * chain.e1p,
    ));
    checks.push(check(
        "correlation",
        "(X'1 - Z'2) psi'",
        vec_norm(&vec_sub(&view.apply(0, X, psi), &view.apply(1, Z, psi))),
        chain.e2p,
    ));
    checks.push(check(
        "correlation",
        "(Z'1 - X'2) psi'",
        vec_norm(&vec_sub(&view.apply(0, Z, psi), &view.apply(1, X, psi))),
        chain.e3p,
    ));
    let z2 = view.apply(1, Z, psi);
    let x2 = view.apply(1, X, psi);
    let s = c(1.0 / SQRT_2);
    let sum2 = vec_scale(&hilbert::vec_add(&z2, &x2), s);
    let diff2 = vec_scale(&vec_sub(&z2, &x2), s);
    checks.push(check(
        "rotated-correlation",
        "(A(0)'1 - (Z'2 + X'2)/sqrt2) psi'",
        vec_norm(&vec_sub(&view.apply(0, A0, psi), &sum2)),
        chain.e4p,
    ));
    checks.push(check(
        "rotated-correlation",
        "(A(1)'1 - (Z'2 - X'2)/sqrt2) psi'",
        vec_norm(&vec_sub(&view.apply(0, A1, psi), &diff2)),
        chain.e4p,
    ));

    // swap into the ancillas
    let dims4 = [d1, d2, 2, 2];
    let anc = kron_vec(&gates::ket(2, 0), &gates::plus());
    let swap = |v: &[C64]| -> Vec<C64> {
        let full = kron_vec(v, &anc);
        let a = apply_on_pair(&dims4, &full, 0, 2, &iso.u1);
        apply_on_pair(&dims4, &a, 1, 3, &iso.u2)
    };
    let target = kron_vec(&iso.junk, hilbert::bell_target().amps());
    let ideal = |site: usize, m: &Matrix, v: &[C64]| apply_on_site(&dims4, v, site, m);
    let swapped = swap(psi);
    let swap_residual = vec_norm(&vec_sub(&swapped, &target));
    checks.push(check(
        "swap",
        "U psi' - junk target",
        swap_residual,
        chain.d1p,
    ));

    let x = gates::x();
    let z = gates::z();
    let single: [(&str, usize, Setting, usize, &Matrix); 4] = [
        ("U X'1 psi' - X1 junk target", 0, X, 2, &x),
        ("U Z'1 psi' - Z1 junk target", 0, Z, 2, &z),
        ("U X'2 psi' - X2 junk target", 1, X, 3, &x),
        ("U Z'2 psi' - Z2 junk target", 1, Z, 3, &z),
    ];
    for (name, site, setting, anc_site, m) in single {
        let lhs = swap(&view.apply(site, setting, psi));
        let measured = vec_norm(&vec_sub(&lhs, &ideal(anc_site, m, &target)));
        let mut ch = check("swap", name, measured, opts.swap_safety * chain.d1p);
        ch.note = Some(format!("bound uses {} x delta1'", opts.swap_safety));
        checks.push(ch);
    }
    let a0 = gates::a0();
    let a1 = gates::a1();
    for (name, setting, m) in [
        ("U A(0)'1 psi' - A0 junk target", A0, &a0),
        ("U A(1)'1 psi' - A1 junk target", A1, &a1),
    ] {
        let lhs = swap(&view.apply(0, setting, psi));
        let measured = vec_norm(&vec_sub(&lhs, &ideal(2, m, &target)));
        checks.push(check("swap", name, measured, chain.d2p));
    }

    // operator deviations on H'1 ⊗ a1
    let id2 = Matrix::identity(2, 2);
    let id_d1 = Matrix::identity(d1, d1);
    let support = junk_support(&iso.junk, d1, d2);
    let mut weighted = [0.0; 4];
    let mut restricted = [0.0; 4];
    for (k, (setting, m)) in [(X, &x), (Z, &z), (A0, &a0), (A1, &a1)]
        .into_iter()
        .enumerate()
    {
        let d = &iso.u1 * kron(o1.get(setting), &id2) * iso.u1.adjoint() - kron(&id_d1, m);
        let moved = apply_on_pair(&dims4, &target, 0, 2, &d);
        weighted[k] = SQRT_2 * vec_norm(&moved);
        restricted[k] = spectral_norm(&(support.adjoint() * &d * &support));
    }
    let deviations = Deviations {
        x: weighted[0],
        z: weighted[1],
        a0: weighted[2],
        a1: weighted[3],
    };
    let xz_bound = 2.0 * SQRT_2 * chain.d1p;
    let a_bound = SQRT_2 * (chain.d1p + chain.d2p);
    for (name, v, b) in [
        ("U1 X'1 U1† - X1", deviations.x, xz_bound),
        ("U1 Z'1 U1† - Z1", deviations.z, xz_bound),
        ("U1 A(0)'1 U1† - A0", deviations.a0, a_bound),
        ("U1 A(1)'1 U1† - A1", deviations.a1, a_bound),
    ] {
        checks.push(check("operator", name, v, b));
    }
    let closed = closed_form_bounds(&eps, &opts.constants);
    for (name, v, b) in [
        ("X deviation within delta1", deviations.x, closed.0),
        ("Z deviation within delta1", deviations.z, closed.0),
        ("A(0) deviation within delta2", deviations.a0, closed.1),
        ("A(1) deviation within delta2", deviations.a1, closed.1),
    ] {
        checks.push(check("closed-form", name, v, b));
    }
    let all_hold = checks.iter().all(|c| c.holds);
    Ok(ExtractionResult {
        dims: [d1, d2],
        epsilons: eps,
        chain,
        closed_form: [closed.0, closed.1],
        junk_norm: iso.junk_norm,
        swap_residual,
        deviations,
        restricted_spectral: Deviations {
            x: restricted[0],
            z: restricted[1],
            a0: restricted[2],
            a1: restricted[3],
        },
        swap_safety: opts.swap_safety,
        checks,
        all_hold,
        u1: opts.include_matrices.then(|| MatrixDump::from(&iso.u1)),
        u2: opts.include_matrices.then(|| MatrixDump::from(&iso.u2)),
    })
}

/// Isometry from `a1 ⊗ supp(rho)` into `H'1 ⊗ a1`, where `rho` is the junk's
/// reduced state on `H'1`.
fn junk_support(junk: &[C64], d1: usize, d2: usize) -> Matrix {
    let m = Matrix::from_row_slice(d1, d2, junk);
    let rho = &m * m.adjoint();
    let eig = SymmetricEigen::new(rho);
    let scale = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(1e-300);
    let cols: Vec<usize> = (0..d1)
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * scale)
        .collect();
    let mut v = Matrix::zeros(2 * d1, 2 * cols.len());
    for (j, &k) in cols.iter().enumerate() {
        for r in 0..d1 {
            for a in 0..2 {
                v[(r * 2 + a, j * 2 + a)] = eig.eigenvectors[(r, k)];
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{DeviceRegistry, Target};

    fn rotated_device(site: usize, setting: Setting, theta: f64) -> DeviceModel {
        let mut obs = vec![SiteObservables::ideal(), SiteObservables::ideal()];
        let r = gates::rotation(theta / 2.0);
        let m = obs[site].get(setting).clone();
        *obs[site].get_mut(setting) = &r * m * r.adjoint();
        DeviceModel::from_state("rotated", hilbert::bell_target(), obs).unwrap()
    }

    #[test]
    fn zero_epsilons_give_zero_chain() {
        let ch = delta_chain(&EpsilonSet::default());
        assert_eq!(ch.d1, 0.0);
        assert_eq!(ch.d2, 0.0);
    }

    #[test]
    fn chain_example_by_hand() {
        let eps = EpsilonSet::new(0.01, 1e-4, 1e-4, 0.01, 0.01).unwrap();
        let ch = delta_chain(&eps);
        // e1' = 2^1.25 * 0.1, e2' = e3' = sqrt2 * 0.01
        let e1p = 0.237_841_423_000_544_4;
        let e23 = 0.014_142_135_623_730_95;
        let e4p = (SQRT_2 * 0.01 + 0.005 + 0.02f64).sqrt();
        let d1p = 0.5 * (4.0 * e23 + e1p + 2.0 * e23);
        assert!((ch.d1p - d1p).abs() < 1e-15);
        assert!((ch.d1 - 0.456_36).abs() < 1e-4, "{}", ch.d1);
        assert!((ch.d2 - 0.830_66).abs() < 1e-4, "{}", ch.d2);
        assert!((ch.e4p - e4p).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_chain_for_delta1_and_bounds_delta2() {
        let eps = EpsilonSet::new(0.02, 0.003, 0.001, 0.05, 0.04).unwrap();
        let ch = delta_chain(&eps);
        let (d1, d2) = closed_form_bounds(&eps, &BoundConstants::default());
        assert!((d1 - ch.d1).abs() < 1e-12);
        assert!(d2 >= ch.d2 - 1e-12);
    }

    #[test]
    fn honest_device_is_exact() {
        let d = DeviceModel::honest_bell();
        let eps = measure_epsilons(&d).unwrap();
        assert!(eps.as_array().iter().all(|&e| e < 1e-12), "{eps:?}");
        let iso = build_isometries(&d).unwrap();
        assert!((iso.junk_norm - 1.0).abs() < 1e-12);
        let r = verify_lemma_chain(&d).unwrap();
        assert!(r.swap_residual < 1e-12);
        for ch in &r.checks {
            assert!(ch.measured < 1e-10, "{ch:?}");
        }
        assert!(r.all_hold);
        let dv = r.restricted_spectral;
        assert!(dv.x.max(dv.z).max(dv.a0).max(dv.a1) < 1e-10);
    }

    #[test]
    fn isometries_are_unitary() {
        let d = rotated_device(0, Setting::X, 0.2);
        let iso = build_isometries(&d).unwrap();
        assert!(unitarity_defect(&iso.u1) < 1e-10);
        assert!(unitarity_defect(&iso.u2) < 1e-10);
    }

    #[test]
    fn rotated_z2_gives_closed_form_epsilon() {
        for theta in [0.01, 0.1, 0.3] {
            let d = rotated_device(1, Setting::Z, theta);
            let eps = measure_epsilons(&d).unwrap();
            assert!((eps.e2 - (1.0 - theta.cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_a0_residual_within_delta1p() {
        let d = rotated_device(0, Setting::A0, 0.05);
        let r = verify_lemma_chain(&d).unwrap();
        assert!(r.swap_residual <= r.chain.d1p + 1e-12);
    }

    #[test]
    fn rotation_sweep_keeps_every_inequality() {
        for setting in Setting::ALL {
            for site in 0..2 {
                for theta in [0.01, 0.05, 0.1, 0.2, 0.3] {
                    let d = rotated_device(site, setting, theta);
                    let r = verify_lemma_chain(&d).unwrap();
                    for ch in &r.checks {
                        assert!(ch.holds, "site {site} {setting:?} {theta}: {ch:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn preset_battery_keeps_every_inequality() {
        let reg = DeviceRegistry::default();
        for spec in [
            "depolarized:0.02",
            "rotated:0.1",
            "leaky:0.05",
            "depolarized:0.3",
        ] {
            let d = reg.build(spec, &Target::bell()).unwrap();
            let r = verify_lemma_chain(&d).unwrap();
            for ch in &r.checks {
                assert!(ch.holds, "{spec}: {ch:?}");
            }
        }
    }

    #[test]
    fn operator_deviation_examples() {
        let z = gates::z();
        let i = Matrix::identity(2, 2);
        assert_eq!(operator_deviation(&i, &z, &z).unwrap(), 0.0);
        for theta in [0.1, 0.7, 2.0] {
            let r = gates::rotation(theta / 2.0);
            let zt = &r * &z * r.adjoint();
            let v = operator_deviation(&i, &zt, &z).unwrap();
            assert!((v - 2.0 * (theta / 2.0).sin()).abs() < 1e-12);
        }
        assert!(operator_deviation(&i, &Matrix::identity(3, 3), &z).is_err());
    }

    #[test]
    fn power_iteration_matches_svd() {
        let n = 40;
        let m = Matrix::from_fn(n, n, |r, k| c(((r * 7 + k * 3) % 11) as f64 - 5.0));
        let svd = m.singular_values().max();
        assert!((power_norm(&m) - svd).abs() < 1e-6 * svd);
    }

    #[test]
    fn mixed_device_is_purified() {
        let d = DeviceRegistry::default()
            .build("maximally-mixed", &Target::bell())
            .unwrap();
        let eps = measure_epsilons(&d).unwrap();
        assert!((eps.e2 - 1.0).abs() < 1e-12);
        let r = verify_lemma_chain(&d).unwrap();
        assert_eq!(r.dims, [2, 8]);
        assert!(r.all_hold);
    }
}
