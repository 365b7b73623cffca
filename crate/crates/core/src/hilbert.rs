//! Dense pure-state simulation over composite registers.
//!
//! Amplitudes are stored with site 0 as the most significant index: for
//! per-site dimensions `[d0, d1, .., dk]` the basis state `|i0, i1, .., ik>`
//! lives at offset `((i0 * d1 + i1) * d2 + i2) ...`. Every routine in the
//! crate, including the report generators, depends on this ordering.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Matrix = DMatrix<C64>;

pub const NORM_TOL: f64 = 1e-12;
pub const UNITARY_TOL: f64 = 1e-10;
pub const BRANCH_TOL: f64 = 1e-14;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Single-qubit matrices in the computational basis.
pub mod gates {
    use super::*;

    pub fn identity(d: usize) -> Matrix {
        Matrix::identity(d, d)
    }

    pub fn x() -> Matrix {
        Matrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    pub fn z() -> Matrix {
        Matrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }

    pub fn y() -> Matrix {
        let i = C64::new(0.0, 1.0);
        Matrix::from_row_slice(2, 2, &[ZERO, -i, i, ZERO])
    }

    pub fn hadamard() -> Matrix {
        let h = c(FRAC_1_SQRT_2);
        Matrix::from_row_slice(2, 2, &[h, h, h, -h])
    }

    /// `cos(angle) Z + sin(angle) X`; Z, A(0), X, A(1) sit at multiples of pi/4.
    pub fn xz_plane(angle: f64) -> Matrix {
        let (s, co) = angle.sin_cos();
        Matrix::from_row_slice(2, 2, &[c(co), c(s), c(s), c(-co)])
    }

    /// `(X + Z)/sqrt 2`.
    pub fn a0() -> Matrix {
        (x() + z()) * c(FRAC_1_SQRT_2)
    }

    /// `(X - Z)/sqrt 2`.
    pub fn a1() -> Matrix {
        (x() - z()) * c(FRAC_1_SQRT_2)
    }

    /// Real rotation `[[cos t, -sin t], [sin t, cos t]]`; conjugating an
    /// XZ-plane observable by it advances the observable's angle by `2 t`.
    pub fn rotation(theta: f64) -> Matrix {
        let (s, co) = theta.sin_cos();
        Matrix::from_row_slice(2, 2, &[c(co), c(-s), c(s), c(co)])
    }

    pub fn ket(d: usize, index: usize) -> Vec<C64> {
        let mut v = vec![ZERO; d];
        v[index] = ONE;
        v
    }

    pub fn plus() -> Vec<C64> {
        vec![c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2)]
    }

    pub fn minus() -> Vec<C64> {
        vec![c(FRAC_1_SQRT_2), c(-FRAC_1_SQRT_2)]
    }
}

/// The four measurement settings a device exposes on every site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    X,
    Z,
    A0,
    A1,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::X, Setting::Z, Setting::A0, Setting::A1];

    pub fn ideal(self) -> Matrix {
        match self {
            Setting::X => gates::x(),
            Setting::Z => gates::z(),
            Setting::A0 => gates::a0(),
            Setting::A1 => gates::a1(),
        }
    }

    /// Position in the XZ plane in units of pi/4 (Z = 0, A(0) = 1, X = 2, A(1) = 3).
    pub fn angle_index(self) -> u8 {
        match self {
            Setting::Z => 0,
            Setting::A0 => 1,
            Setting::X => 2,
            Setting::A1 => 3,
        }
    }

    pub fn from_angle_index(i: u8) -> Setting {
        match i % 4 {
            0 => Setting::Z,
            1 => Setting::A0,
            2 => Setting::X,
            _ => Setting::A1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Setting::X => "X",
            Setting::Z => "Z",
            Setting::A0 => "A0",
            Setting::A1 => "A1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn sign(self) -> i32 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    /// 0 for +1, 1 for -1.
    pub fn bit(self) -> usize {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
        }
    }

    pub fn from_bit(b: usize) -> Outcome {
        if b & 1 == 0 {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }

    pub fn flip(self) -> Outcome {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }

    pub fn times(self, other: Outcome) -> Outcome {
        if self == other {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub site: usize,
    pub setting: Setting,
    pub outcome: Outcome,
}

/// Hermitian operator with spectrum in {+1, -1}, attached to one site.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryObservable {
    site: usize,
    matrix: Matrix,
}

impl BinaryObservable {
    pub fn new(site: usize, matrix: Matrix) -> Result<Self> {
        check_binary(site, &matrix)?;
        Ok(Self { site, matrix })
    }

    pub fn ideal(site: usize, setting: Setting) -> Self {
        Self {
            site,
            matrix: setting.ideal(),
        }
    }

    pub fn site(&self) -> usize {
        self.site
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Spectral projector `(I + s M)/2` onto the given outcome.
    pub fn projector(&self, outcome: Outcome) -> Matrix {
        projector(&self.matrix, outcome)
    }
}

pub fn projector(m: &Matrix, outcome: Outcome) -> Matrix {
    let d = m.nrows();
    let s = c(outcome.sign() as f64);
    (Matrix::identity(d, d) + m * s) * c(0.5)
}

pub fn check_binary(site: usize, m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::NotBinaryObservable {
            site,
            reason: format!("matrix is {}x{}", m.nrows(), m.ncols()),
        });
    }
    let herm = max_abs(&(m - m.adjoint()));
    if herm > NORM_TOL {
        return Err(Error::NotBinaryObservable {
            site,
            reason: format!("not Hermitian (deviation {herm:.3e})"),
        });
    }
    let d = m.nrows();
    let sq = max_abs(&(m * m - Matrix::identity(d, d)));
    if sq > UNITARY_TOL {
        return Err(Error::NotBinaryObservable {
            site,
            reason: format!("square differs from identity by {sq:.3e}"),
        });
    }
    Ok(())
}

/// Largest entry modulus.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn unitarity_defect(u: &Matrix) -> f64 {
    if u.nrows() != u.ncols() {
        return f64::INFINITY;
    }
    let d = u.nrows();
    max_abs(&(u.adjoint() * u - Matrix::identity(d, d)))
}

/// Apply a single-site operator to a raw amplitude vector.
pub fn apply_on_site(dims: &[usize], amps: &[C64], site: usize, op: &Matrix) -> Vec<C64> {
    let d = dims[site];
    debug_assert_eq!(op.nrows(), d);
    debug_assert_eq!(op.ncols(), d);
    let inner: usize = dims[site + 1..].iter().product();
    let outer: usize = dims[..site].iter().product();
    let mut out = vec![ZERO; amps.len()];
    let mut col = vec![ZERO; d];
    for o in 0..outer {
        let base = o * d * inner;
        for i in 0..inner {
            for (k, slot) in col.iter_mut().enumerate() {
                *slot = amps[base + k * inner + i];
            }
            for r in 0..d {
                let mut acc = ZERO;
                for (k, v) in col.iter().enumerate() {
                    acc += op[(r, k)] * v;
                }
                out[base + r * inner + i] = acc;
            }
        }
    }
    out
}

/// Apply an operator on the ordered site pair `(s, t)`; `op` is indexed
/// `i_s * dims[t] + i_t`.
pub fn apply_on_pair(dims: &[usize], amps: &[C64], s: usize, t: usize, op: &Matrix) -> Vec<C64> {
    let (ds, dt) = (dims[s], dims[t]);
    debug_assert!(s != t);
    debug_assert_eq!(op.nrows(), ds * dt);
    let stride = |site: usize| -> usize { dims[site + 1..].iter().product() };
    let (ss, st) = (stride(s), stride(t));
    let mut out = vec![ZERO; amps.len()];
    for (idx, amp) in amps.iter().enumerate() {
        if *amp == ZERO {
            continue;
        }
        let is = (idx / ss) % ds;
        let it = (idx / st) % dt;
        let base = idx - is * ss - it * st;
        let col = is * dt + it;
        for js in 0..ds {
            for jt in 0..dt {
                let v = op[(js * dt + jt, col)];
                if v != ZERO {
                    out[base + js * ss + jt * st] += v * amp;
                }
            }
        }
    }
    out
}

pub fn inner_product(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

pub fn vec_norm(a: &[C64]) -> f64 {
    norm_sqr(a).sqrt()
}

pub fn vec_sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn vec_add(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn vec_scale(a: &[C64], s: C64) -> Vec<C64> {
    a.iter().map(|x| x * s).collect()
}

pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Dense operator on the full register acting as `op` on `site`.
pub fn embed_operator(dims: &[usize], site: usize, op: &Matrix) -> Matrix {
    let outer: usize = dims[..site].iter().product();
    let inner: usize = dims[site + 1..].iter().product();
    kron(
        &kron(&Matrix::identity(outer, outer), op),
        &Matrix::identity(inner, inner),
    )
}

/// Composite-register pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    dims: Vec<usize>,
    amps: Vec<C64>,
}

impl PureState {
    pub fn new(dims: Vec<usize>, amps: Vec<C64>) -> Result<Self> {
        check_dims(&dims, amps.len())?;
        let n = norm_sqr(&amps);
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self { dims, amps })
    }

    pub fn normalized(dims: Vec<usize>, amps: Vec<C64>) -> Result<Self> {
        check_dims(&dims, amps.len())?;
        let n = vec_norm(&amps);
        if n < BRANCH_TOL {
            return Err(Error::DegenerateBranch(n));
        }
        let amps = vec_scale(&amps, c(1.0 / n));
        Ok(Self { dims, amps })
    }

    pub fn basis(dims: Vec<usize>, index: usize) -> Result<Self> {
        let total: usize = dims.iter().product();
        if index >= total {
            return Err(Error::Dimension(format!(
                "basis index {index} >= dimension {total}"
            )));
        }
        let amps = gates::ket(total, index);
        Self::new(dims, amps)
    }

    pub fn product(factors: &[Vec<C64>]) -> Result<Self> {
        let dims: Vec<usize> = factors.iter().map(|f| f.len()).collect();
        let amps = factors.iter().fold(vec![ONE], |acc, f| kron_vec(&acc, f));
        Self::normalized(dims, amps)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn amps(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amps(self) -> Vec<C64> {
        self.amps
    }

    pub fn num_sites(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amps)
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.dims.len() {
            return Err(Error::SiteOutOfRange {
                site,
                sites: self.dims.len(),
            });
        }
        Ok(())
    }

    fn check_op(&self, site: usize, op: &Matrix) -> Result<()> {
        self.check_site(site)?;
        if op.nrows() != self.dims[site] || op.ncols() != self.dims[site] {
            return Err(Error::Dimension(format!(
                "{}x{} operator on site {site} of dimension {}",
                op.nrows(),
                op.ncols(),
                self.dims[site]
            )));
        }
        Ok(())
    }

    /// Raw (possibly unnormalized) vector `op_site |psi>`.
    pub fn apply_raw(&self, site: usize, op: &Matrix) -> Result<Vec<C64>> {
        self.check_op(site, op)?;
        Ok(apply_on_site(&self.dims, &self.amps, site, op))
    }

    pub fn apply_local(&self, site: usize, u: &Matrix) -> Result<PureState> {
        self.check_op(site, u)?;
        let defect = unitarity_defect(u);
        if defect > UNITARY_TOL {
            return Err(Error::NotUnitary(defect));
        }
        Ok(PureState {
            dims: self.dims.clone(),
            amps: apply_on_site(&self.dims, &self.amps, site, u),
        })
    }

    pub fn inner(&self, other: &PureState) -> C64 {
        inner_product(&self.amps, &other.amps)
    }

    pub fn fidelity(&self, other: &PureState) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// `<psi| O_1 O_2 ... |psi>` for observables on distinct sites.
    pub fn expectation(&self, obs: &[&BinaryObservable]) -> Result<f64> {
        let mut seen = Vec::with_capacity(obs.len());
        for o in obs {
            if seen.contains(&o.site) {
                return Err(Error::RepeatedSite(o.site));
            }
            seen.push(o.site);
        }
        let mut v = self.amps.clone();
        for o in obs {
            self.check_op(o.site, &o.matrix)?;
            v = apply_on_site(&self.dims, &v, o.site, &o.matrix);
        }
        Ok(inner_product(&self.amps, &v).re)
    }

    /// `<psi| op |psi>` for an arbitrary single-site operator.
    pub fn expectation_op(&self, site: usize, op: &Matrix) -> Result<C64> {
        let v = self.apply_raw(site, op)?;
        Ok(inner_product(&self.amps, &v))
    }

    pub fn outcome_probability(&self, obs: &BinaryObservable, outcome: Outcome) -> Result<f64> {
        let v = self.apply_raw(obs.site, &obs.projector(outcome))?;
        Ok(norm_sqr(&v))
    }

    /// Post-measurement state for a fixed outcome, with its probability.
    pub fn project(
        &self,
        site: usize,
        observable: &Matrix,
        outcome: Outcome,
    ) -> Result<(f64, PureState)> {
        let v = self.apply_raw(site, &projector(observable, outcome))?;
        let p = norm_sqr(&v);
        if p.sqrt() < BRANCH_TOL {
            return Err(Error::DegenerateBranch(p.sqrt()));
        }
        let amps = vec_scale(&v, c(1.0 / p.sqrt()));
        Ok((
            p,
            PureState {
                dims: self.dims.clone(),
                amps,
            },
        ))
    }

    /// Born-rule sample; outcome +1 is chosen iff a uniform draw is below P(+1).
    pub fn measure<R: Rng + ?Sized>(
        &self,
        obs: &BinaryObservable,
        rng: &mut R,
    ) -> Result<(Outcome, PureState)> {
        self.measure_matrix(obs.site, &obs.matrix, rng)
    }

    pub fn measure_matrix<R: Rng + ?Sized>(
        &self,
        site: usize,
        observable: &Matrix,
        rng: &mut R,
    ) -> Result<(Outcome, PureState)> {
        let plus = self.apply_raw(site, &projector(observable, Outcome::Plus))?;
        let p_plus = norm_sqr(&plus);
        let u: f64 = rng.random();
        let (outcome, v) = if u < p_plus {
            (Outcome::Plus, plus)
        } else {
            (
                Outcome::Minus,
                apply_on_site(
                    &self.dims,
                    &self.amps,
                    site,
                    &projector(observable, Outcome::Minus),
                ),
            )
        };
        let nrm = vec_norm(&v);
        if nrm < BRANCH_TOL {
            return Err(Error::DegenerateBranch(nrm));
        }
        Ok((
            outcome,
            PureState {
                dims: self.dims.clone(),
                amps: vec_scale(&v, c(1.0 / nrm)),
            },
        ))
    }

    /// Reduced density matrix on `sites` (in the order given).
    pub fn reduced_density(&self, sites: &[usize]) -> Result<Matrix> {
        for &s in sites {
            self.check_site(s)?;
        }
        let n = self.dims.len();
        let keep_dims: Vec<usize> = sites.iter().map(|&s| self.dims[s]).collect();
        let keep_total: usize = keep_dims.iter().product();
        let rest: Vec<usize> = (0..n).filter(|s| !sites.contains(s)).collect();
        let rest_total: usize = rest.iter().map(|&s| self.dims[s]).product();
        // psi as a keep_total x rest_total matrix
        let mut m = Matrix::zeros(keep_total, rest_total);
        let mut digits = vec![0usize; n];
        for (idx, amp) in self.amps.iter().enumerate() {
            let mut r = idx;
            for s in (0..n).rev() {
                digits[s] = r % self.dims[s];
                r /= self.dims[s];
            }
            let mut ki = 0;
            for &s in sites {
                ki = ki * self.dims[s] + digits[s];
            }
            let mut ri = 0;
            for &s in &rest {
                ri = ri * self.dims[s] + digits[s];
            }
            m[(ki, ri)] = *amp;
        }
        Ok(&m * m.adjoint())
    }
}

fn check_dims(dims: &[usize], len: usize) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Dimension(format!(
            "invalid site dimensions {dims:?}"
        )));
    }
    let total: usize = dims.iter().product();
    if total != len {
        return Err(Error::Dimension(format!(
            "{len} amplitudes for dimensions {dims:?} (expected {total})"
        )));
    }
    Ok(())
}

/// Controlled-Z between two qubit sites, in place.
pub fn apply_cz(dims: &[usize], amps: &mut [C64], a: usize, b: usize) {
    let n = dims.len();
    let stride = |s: usize| -> usize { dims[s + 1..].iter().product() };
    let (sa, sb) = (stride(a), stride(b));
    debug_assert!(a < n && b < n && dims[a] == 2 && dims[b] == 2);
    for (idx, amp) in amps.iter_mut().enumerate() {
        if (idx / sa) % 2 == 1 && (idx / sb) % 2 == 1 {
            *amp = -*amp;
        }
    }
}

/// `prod_{(i,j) in E} CZ_ij |+>^n`.
pub fn make_graph_state(n: usize, edges: &[(usize, usize)]) -> Result<PureState> {
    if n == 0 {
        return Err(Error::InvalidGraph("graph has no vertices".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &(u, v) in edges {
        if u == v {
            return Err(Error::InvalidGraph(format!("self-loop on vertex {u}")));
        }
        if u >= n || v >= n {
            return Err(Error::InvalidGraph(format!("edge ({u},{v}) out of range")));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(Error::InvalidGraph(format!("duplicate edge ({u},{v})")));
        }
    }
    let dims = vec![2; n];
    let total = 1usize << n;
    let amp = c((total as f64).sqrt().recip());
    let mut amps = vec![amp; total];
    for &(u, v) in &seen {
        apply_cz(&dims, &mut amps, u, v);
    }
    PureState::new(dims, amps)
}

/// The two-qubit target `(|0,+> + |1,->)/sqrt 2`.
pub fn bell_target() -> PureState {
    make_graph_state(2, &[(0, 1)]).expect("two-vertex graph is valid")
}

/// Joint outcome distribution of single-site observables on distinct sites,
/// as `(outcomes, probability)` pairs over all branches with nonzero weight.
pub fn outcome_distribution(
    state: &PureState,
    obs: &[(usize, &Matrix)],
) -> Result<Vec<(Vec<Outcome>, f64)>> {
    let mut seen = Vec::new();
    for (s, m) in obs {
        if seen.contains(s) {
            return Err(Error::RepeatedSite(*s));
        }
        seen.push(*s);
        state.check_op(*s, m)?;
    }
    let projectors: Vec<[Matrix; 2]> = obs
        .iter()
        .map(|(_, m)| [projector(m, Outcome::Plus), projector(m, Outcome::Minus)])
        .collect();
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<Outcome>, Vec<C64>)> = vec![(Vec::new(), state.amps.clone())];
    while let Some((hist, v)) = stack.pop() {
        let k = hist.len();
        if k == obs.len() {
            let p = norm_sqr(&v);
            if p > 0.0 {
                out.push((hist, p));
            }
            continue;
        }
        for (b, proj) in projectors[k].iter().enumerate().rev() {
            let w = apply_on_site(&state.dims, &v, obs[k].0, proj);
            if norm_sqr(&w) <= 1e-30 {
                continue;
            }
            let mut h = hist.clone();
            h.push(Outcome::from_bit(b));
            stack.push((h, w));
        }
    }
    out.sort_by(|a, b| {
        let ka: Vec<usize> = a.0.iter().map(|o| o.bit()).collect();
        let kb: Vec<usize> = b.0.iter().map(|o| o.bit()).collect();
        ka.cmp(&kb)
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::f64::consts::{PI, SQRT_2};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn obs(site: usize, s: Setting) -> BinaryObservable {
        BinaryObservable::ideal(site, s)
    }

    #[test]
    fn single_vertex_graph_is_plus() {
        let g = make_graph_state(1, &[]).unwrap();
        let plus = PureState::new(vec![2], gates::plus()).unwrap();
        assert!(close(g.fidelity(&plus), 1.0, 1e-14));
    }

    #[test]
    fn edge_graph_is_bell_target() {
        let g = bell_target();
        let expected = PureState::normalized(
            vec![2, 2],
            vec_add(
                &kron_vec(&gates::ket(2, 0), &gates::plus()),
                &kron_vec(&gates::ket(2, 1), &gates::minus()),
            ),
        )
        .unwrap();
        assert!(close(g.fidelity(&expected), 1.0, 1e-14));
    }

    #[test]
    fn triangle_stabilizers_from_brute_force() {
        // independent 8-amplitude construction: amp(b) = (-1)^{b0 b1 + b1 b2 + b0 b2} / sqrt 8
        let mut amps = Vec::new();
        for idx in 0..8usize {
            let b = [(idx >> 2) & 1, (idx >> 1) & 1, idx & 1];
            let parity = b[0] * b[1] + b[1] * b[2] + b[0] * b[2];
            let s = if parity % 2 == 0 { 1.0 } else { -1.0 };
            amps.push(c(s / 8f64.sqrt()));
        }
        let brute = PureState::new(vec![2, 2, 2], amps).unwrap();
        let g = make_graph_state(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(close(g.fidelity(&brute), 1.0, 1e-14));
        for i in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            let x = obs(i, Setting::X);
            let z1 = obs(others[0], Setting::Z);
            let z2 = obs(others[1], Setting::Z);
            assert!(close(g.expectation(&[&x, &z1, &z2]).unwrap(), 1.0, 1e-12));
        }
    }

    #[test]
    fn graph_state_rejects_bad_edges() {
        assert!(make_graph_state(2, &[(0, 0)]).is_err());
        assert!(make_graph_state(2, &[(0, 1), (1, 0)]).is_err());
        assert!(make_graph_state(2, &[(0, 2)]).is_err());
        assert!(make_graph_state(0, &[]).is_err());
    }

    #[test]
    fn eigenstate_measurements_are_deterministic() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let zero = PureState::basis(vec![2], 0).unwrap();
        let plus = PureState::new(vec![2], gates::plus()).unwrap();
        for _ in 0..50 {
            assert_eq!(
                zero.measure(&obs(0, Setting::Z), &mut rng).unwrap().0,
                Outcome::Plus
            );
            assert_eq!(
                plus.measure(&obs(0, Setting::X), &mut rng).unwrap().0,
                Outcome::Plus
            );
        }
    }

    #[test]
    fn a0_on_zero_probability() {
        let zero = PureState::basis(vec![2], 0).unwrap();
        let p = zero
            .outcome_probability(&obs(0, Setting::A0), Outcome::Plus)
            .unwrap();
        assert!(close(p, (1.0 + FRAC_1_SQRT_2) / 2.0, 1e-14));
        assert!(close(p, 0.853_553_390_593_273_8, 1e-12));
    }

    #[test]
    fn bell_target_correlations() {
        let b = bell_target();
        let e = |o: &[(usize, Setting)]| {
            let v: Vec<BinaryObservable> = o.iter().map(|&(s, t)| obs(s, t)).collect();
            let r: Vec<&BinaryObservable> = v.iter().collect();
            b.expectation(&r).unwrap()
        };
        assert!(close(e(&[(0, Setting::X), (1, Setting::Z)]), 1.0, 1e-12));
        assert!(close(e(&[(0, Setting::Z), (1, Setting::X)]), 1.0, 1e-12));
        let a0zx =
            e(&[(0, Setting::A0), (1, Setting::Z)]) + e(&[(0, Setting::A0), (1, Setting::X)]);
        assert!(close(a0zx, SQRT_2, 1e-12));
        let xxzz = e(&[(0, Setting::X), (1, Setting::X)]) + e(&[(0, Setting::Z), (1, Setting::Z)]);
        assert!(close(xxzz, 0.0, 1e-12));
    }

    #[test]
    fn apply_local_examples() {
        let plus = PureState::new(vec![2], gates::plus()).unwrap();
        let same = plus.apply_local(0, &gates::identity(2)).unwrap();
        assert_eq!(same, plus);
        let minus = plus.apply_local(0, &gates::z()).unwrap();
        assert!(close(
            minus.fidelity(&PureState::new(vec![2], gates::minus()).unwrap()),
            1.0,
            1e-14
        ));
        let zero = PureState::basis(vec![2], 0).unwrap();
        let one = zero.apply_local(0, &gates::rotation(PI / 2.0)).unwrap();
        assert!(close(one.amps()[1].re, 1.0, 1e-14));
        assert!(close(one.amps()[0].norm(), 0.0, 1e-14));
    }

    #[test]
    fn apply_local_rejects_non_unitary() {
        let plus = PureState::new(vec![2], gates::plus()).unwrap();
        let m = gates::identity(2) * c(2.0);
        assert!(matches!(plus.apply_local(0, &m), Err(Error::NotUnitary(_))));
    }

    #[test]
    fn expectation_rejects_repeated_sites() {
        let b = bell_target();
        let x = obs(0, Setting::X);
        assert!(matches!(
            b.expectation(&[&x, &x]),
            Err(Error::RepeatedSite(0))
        ));
    }

    #[test]
    fn binary_observable_validation() {
        assert!(BinaryObservable::new(0, gates::a0()).is_ok());
        assert!(BinaryObservable::new(0, gates::x() + gates::z()).is_err());
        assert!(BinaryObservable::new(0, gates::y() * C64::new(0.0, 1.0)).is_err());
    }

    #[test]
    fn observable_algebra() {
        let i2 = gates::identity(2);
        for m in [gates::a0(), gates::a1()] {
            assert!(max_abs(&(&m * &m - &i2)) < 1e-10);
        }
        let anti = gates::x() * gates::z() + gates::z() * gates::x();
        assert_eq!(max_abs(&anti), 0.0);
    }

    #[test]
    fn degenerate_branch_is_an_error() {
        let zero = PureState::basis(vec![2], 0).unwrap();
        assert!(matches!(
            zero.project(0, &gates::z(), Outcome::Minus),
            Err(Error::DegenerateBranch(_))
        ));
    }

    #[test]
    fn reduced_density_of_bell_pair_is_mixed() {
        let b = bell_target();
        let rho = b.reduced_density(&[0]).unwrap();
        assert!(close(rho[(0, 0)].re, 0.5, 1e-14));
        assert!(close(rho[(0, 1)].norm(), 0.0, 1e-14));
        let full = b.reduced_density(&[0, 1]).unwrap();
        assert!(close(full.trace().re, 1.0, 1e-14));
    }

    #[test]
    fn outcome_distribution_sums_to_one() {
        let g = make_graph_state(3, &[(0, 1), (1, 2)]).unwrap();
        let x = gates::x();
        let z = gates::z();
        let dist = outcome_distribution(&g, &[(0, &z), (1, &x), (2, &z)]).unwrap();
        let total: f64 = dist.iter().map(|(_, p)| p).sum();
        assert!(close(total, 1.0, 1e-12));
        for (o, p) in &dist {
            // stabilizer Z0 X1 Z2 = +1
            assert_eq!(o[0].sign() * o[1].sign() * o[2].sign(), 1, "p={p}");
        }
    }

    #[test]
    fn site_ordering_is_big_endian() {
        let s = PureState::product(&[gates::ket(2, 1), gates::ket(3, 0)]).unwrap();
        assert_eq!(s.dims(), &[2, 3]);
        assert!(close(s.amps()[3].re, 1.0, 0.0));
    }
}
