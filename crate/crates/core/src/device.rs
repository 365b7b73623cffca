//! Untrusted devices: a preparation procedure plus per-site observables.
//!
//! Protocols never look inside a [`DeviceModel`]; they ask it for copies and
//! for outcomes of the four labelled settings on each site. Exact routines
//! (completeness checks, extraction, diagnostics) use [`Preparation::ensemble`]
//! to see the prepared state as a finite mixture of pure states.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::hilbert::{
    self, c, check_binary, gates, kron, make_graph_state, BinaryObservable, Matrix, Outcome,
    PureState, Setting,
};

/// The four untrusted observables on one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteObservables {
    pub x: Matrix,
    pub z: Matrix,
    pub a0: Matrix,
    pub a1: Matrix,
}

impl SiteObservables {
    pub fn ideal() -> Self {
        Self {
            x: gates::x(),
            z: gates::z(),
            a0: gates::a0(),
            a1: gates::a1(),
        }
    }

    pub fn get(&self, s: Setting) -> &Matrix {
        match s {
            Setting::X => &self.x,
            Setting::Z => &self.z,
            Setting::A0 => &self.a0,
            Setting::A1 => &self.a1,
        }
    }

    pub fn get_mut(&mut self, s: Setting) -> &mut Matrix {
        match s {
            Setting::X => &mut self.x,
            Setting::Z => &mut self.z,
            Setting::A0 => &mut self.a0,
            Setting::A1 => &mut self.a1,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn validate(&self, site: usize) -> Result<()> {
        let d = self.dim();
        for s in Setting::ALL {
            let m = self.get(s);
            if m.nrows() != d {
                return Err(Error::Dimension(format!(
                    "observable {} on site {site} has dimension {} (site has {d})",
                    s.label(),
                    m.nrows()
                )));
            }
            check_binary(site, m)?;
        }
        Ok(())
    }

    /// `u O u^dagger` for every observable.
    pub fn conjugated(&self, u: &Matrix) -> Self {
        let f = |m: &Matrix| u * m * u.adjoint();
        Self {
            x: f(&self.x),
            z: f(&self.z),
            a0: f(&self.a0),
            a1: f(&self.a1),
        }
    }

    /// Qubit observables whose XZ-plane angles are shifted by `theta`.
    pub fn shifted(theta: f64) -> Self {
        let q = std::f64::consts::FRAC_PI_4;
        Self {
            z: gates::xz_plane(theta),
            a0: gates::xz_plane(q + theta),
            x: gates::xz_plane(2.0 * q + theta),
            a1: gates::xz_plane(3.0 * q + theta),
        }
    }

    /// Qubit observables padded with a `+1` eigenspace of dimension `extra`.
    pub fn padded(&self, extra: usize) -> Self {
        let f = |m: &Matrix| {
            let d = m.nrows();
            let mut out = Matrix::identity(d + extra, d + extra);
            out.view_mut((0, 0), (d, d)).copy_from(m);
            out
        };
        Self {
            x: f(&self.x),
            z: f(&self.z),
            a0: f(&self.a0),
            a1: f(&self.a1),
        }
    }

    /// `O ⊗ I_k`, used when a site is enlarged by a purifying register.
    pub fn tensor_identity(&self, k: usize) -> Self {
        let id = Matrix::identity(k, k);
        Self {
            x: kron(&self.x, &id),
            z: kron(&self.z, &id),
            a0: kron(&self.a0, &id),
            a1: kron(&self.a1, &id),
        }
    }
}

/// How a device produces each copy of its state.
pub trait Preparation: fmt::Debug + Send + Sync {
    fn dims(&self) -> Vec<usize>;

    fn prepare(&self, copy: u64, rng: &mut ChaCha20Rng) -> Result<PureState>;

    /// The per-copy state as a finite mixture, if the preparation is i.i.d.
    fn ensemble(&self) -> Option<Vec<(f64, PureState)>>;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct FixedState(pub PureState);

impl Preparation for FixedState {
    fn dims(&self) -> Vec<usize> {
        self.0.dims().to_vec()
    }

    fn prepare(&self, _copy: u64, _rng: &mut ChaCha20Rng) -> Result<PureState> {
        Ok(self.0.clone())
    }

    fn ensemble(&self) -> Option<Vec<(f64, PureState)>> {
        Some(vec![(1.0, self.0.clone())])
    }

    fn describe(&self) -> String {
        "fixed pure state".into()
    }
}

/// Classical mixture; each copy draws one component.
#[derive(Debug, Clone)]
pub struct Mixture {
    components: Vec<(f64, PureState)>,
    cumulative: Vec<f64>,
}

impl Mixture {
    pub fn new(components: Vec<(f64, PureState)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::param("mixture", "no components"));
        }
        let dims = components[0].1.dims().to_vec();
        let mut total = 0.0;
        let mut cumulative = Vec::with_capacity(components.len());
        for (p, s) in &components {
            if !(*p >= 0.0) {
                return Err(Error::param("mixture", format!("negative weight {p}")));
            }
            if s.dims() != dims.as_slice() {
                return Err(Error::Dimension(
                    "mixture components disagree on dimensions".into(),
                ));
            }
            total += p;
            cumulative.push(total);
        }
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::param("mixture", format!("weights sum to {total}")));
        }
        Ok(Self {
            components,
            cumulative,
        })
    }

    pub fn components(&self) -> &[(f64, PureState)] {
        &self.components
    }
}

impl Preparation for Mixture {
    fn dims(&self) -> Vec<usize> {
        self.components[0].1.dims().to_vec()
    }

    fn prepare(&self, _copy: u64, rng: &mut ChaCha20Rng) -> Result<PureState> {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let idx = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.components.len() - 1);
        Ok(self.components[idx].1.clone())
    }

    fn ensemble(&self) -> Option<Vec<(f64, PureState)>> {
        Some(self.components.clone())
    }

    fn describe(&self) -> String {
        format!("mixture of {} pure states", self.components.len())
    }
}

/// Copies whose index is listed get the corrupted preparation; the rest get
/// the base one. Copies are then correlated through their index, so there is
/// no single-copy ensemble.
#[derive(Debug, Clone)]
pub struct ScheduledCorruption {
    pub base: Arc<dyn Preparation>,
    pub corrupted: Arc<dyn Preparation>,
    pub schedule: std::collections::BTreeSet<u64>,
}

impl Preparation for ScheduledCorruption {
    fn dims(&self) -> Vec<usize> {
        self.base.dims()
    }

    fn prepare(&self, copy: u64, rng: &mut ChaCha20Rng) -> Result<PureState> {
        if self.schedule.contains(&copy) {
            self.corrupted.prepare(copy, rng)
        } else {
            self.base.prepare(copy, rng)
        }
    }

    fn ensemble(&self) -> Option<Vec<(f64, PureState)>> {
        None
    }

    fn describe(&self) -> String {
        format!("scheduled corruption of {} copies", self.schedule.len())
    }
}

/// Per-measurement perturbation of the observable actually applied.
pub trait MeasurementNoise: fmt::Debug + Send + Sync {
    fn perturb(
        &self,
        site: usize,
        setting: Setting,
        observable: &Matrix,
        rng: &mut ChaCha20Rng,
    ) -> Matrix;

    fn describe(&self) -> String;
}

/// Conjugation by a real rotation with angle uniform in `[-max_angle, max_angle]`
/// on qubit sites; higher-dimensional sites are left alone.
#[derive(Debug, Clone, Copy)]
pub struct RandomRotation {
    pub max_angle: f64,
}

impl MeasurementNoise for RandomRotation {
    fn perturb(
        &self,
        _site: usize,
        _setting: Setting,
        observable: &Matrix,
        rng: &mut ChaCha20Rng,
    ) -> Matrix {
        if observable.nrows() != 2 {
            return observable.clone();
        }
        let t = (rng.random::<f64>() * 2.0 - 1.0) * self.max_angle;
        let u = gates::rotation(t / 2.0);
        &u * observable * u.adjoint()
    }

    fn describe(&self) -> String {
        format!("random observable rotation up to {} rad", self.max_angle)
    }
}

/// An untrusted preparation plus untrusted observables on every site.
pub struct DeviceModel {
    label: String,
    dims: Vec<usize>,
    preparation: Arc<dyn Preparation>,
    observables: Vec<SiteObservables>,
    noise: Option<Arc<dyn MeasurementNoise>>,
    copy_limit: Option<u64>,
    prepared: AtomicU64,
}

impl fmt::Debug for DeviceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceModel")
            .field("label", &self.label)
            .field("dims", &self.dims)
            .field("preparation", &self.preparation.describe())
            .field("noise", &self.noise.as_ref().map(|n| n.describe()))
            .field("copy_limit", &self.copy_limit)
            .finish()
    }
}

impl Clone for DeviceModel {
    fn clone(&self) -> Self {
        Self {
            label: self.label.clone(),
            dims: self.dims.clone(),
            preparation: self.preparation.clone(),
            observables: self.observables.clone(),
            noise: self.noise.clone(),
            copy_limit: self.copy_limit,
            prepared: AtomicU64::new(self.prepared.load(Ordering::Relaxed)),
        }
    }
}

impl DeviceModel {
    pub fn new(
        label: impl Into<String>,
        preparation: Arc<dyn Preparation>,
        observables: Vec<SiteObservables>,
    ) -> Result<Self> {
        let dims = preparation.dims();
        if observables.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "{} observable sets for {} sites",
                observables.len(),
                dims.len()
            )));
        }
        for (site, (o, &d)) in observables.iter().zip(&dims).enumerate() {
            if o.dim() != d {
                return Err(Error::Dimension(format!(
                    "site {site} has dimension {d} but its observables have {}",
                    o.dim()
                )));
            }
            o.validate(site)?;
        }
        Ok(Self {
            label: label.into(),
            dims,
            preparation,
            observables,
            noise: None,
            copy_limit: None,
            prepared: AtomicU64::new(0),
        })
    }

    pub fn from_state(
        label: impl Into<String>,
        state: PureState,
        observables: Vec<SiteObservables>,
    ) -> Result<Self> {
        Self::new(label, Arc::new(FixedState(state)), observables)
    }

    /// The ideal graph-state device.
    pub fn honest_graph(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let g = make_graph_state(n, edges)?;
        Self::from_state("honest", g, vec![SiteObservables::ideal(); n])
    }

    /// The ideal two-site device holding `(|0,+> + |1,->)/sqrt 2`.
    pub fn honest_bell() -> Self {
        Self::honest_graph(2, &[(0, 1)]).expect("valid")
    }

    pub fn with_noise(mut self, noise: Arc<dyn MeasurementNoise>) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn with_copy_limit(mut self, limit: u64) -> Self {
        self.copy_limit = Some(limit);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_sites(&self) -> usize {
        self.dims.len()
    }

    pub fn preparation(&self) -> &Arc<dyn Preparation> {
        &self.preparation
    }

    pub fn observables(&self) -> &[SiteObservables] {
        &self.observables
    }

    pub fn observable(&self, site: usize, setting: Setting) -> &Matrix {
        self.observables[site].get(setting)
    }

    pub fn binary_observable(&self, site: usize, setting: Setting) -> BinaryObservable {
        BinaryObservable::new(site, self.observable(site, setting).clone())
            .expect("validated at construction")
    }

    pub fn has_noise(&self) -> bool {
        self.noise.is_some()
    }

    pub fn copies_prepared(&self) -> u64 {
        self.prepared.load(Ordering::SeqCst)
    }

    pub fn reset_copy_counter(&self) {
        self.prepared.store(0, Ordering::SeqCst);
    }

    /// Fails fast if `count` more copies would exceed the device's limit.
    pub fn ensure_available(&self, count: u64) -> Result<()> {
        if let Some(limit) = self.copy_limit {
            let requested = self.copies_prepared() + count;
            if requested > limit {
                return Err(Error::InsufficientCopies { limit, requested });
            }
        }
        Ok(())
    }

    pub fn prepare_copy(&self, copy: u64, rng: &mut ChaCha20Rng) -> Result<PureState> {
        self.prepared.fetch_add(1, Ordering::SeqCst);
        self.preparation.prepare(copy, rng)
    }

    /// Counts copies consumed by a sampler that bypasses [`Self::prepare_copy`].
    pub(crate) fn note_prepared(&self, count: u64) {
        self.prepared.fetch_add(count, Ordering::SeqCst);
    }

    /// The pure state of an i.i.d. single-component preparation.
    pub fn static_state(&self) -> Option<PureState> {
        let mut e = self.preparation.ensemble()?;
        if e.len() == 1 {
            Some(e.remove(0).1)
        } else {
            None
        }
    }

    pub fn ensemble(&self) -> Option<Vec<(f64, PureState)>> {
        self.preparation.ensemble()
    }

    pub fn measure(
        &self,
        state: &PureState,
        site: usize,
        setting: Setting,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Outcome, PureState)> {
        let base = self.observable(site, setting);
        match &self.noise {
            Some(n) => {
                let m = n.perturb(site, setting, base, rng);
                state.measure_matrix(site, &m, rng)
            }
            None => state.measure_matrix(site, base, rng),
        }
    }

    /// Same device with the state replaced by a purification of its ensemble.
    ///
    /// The purifying register is appended to `site`, which grows from `d` to
    /// `d * K` for `K` mixture components; that site's observables become
    /// `O ⊗ I_K`.
    pub fn purified(&self, site: usize) -> Result<DeviceModel> {
        let ens = self
            .ensemble()
            .ok_or_else(|| Error::param("device", "preparation is not i.i.d."))?;
        if site >= self.dims.len() {
            return Err(Error::SiteOutOfRange {
                site,
                sites: self.dims.len(),
            });
        }
        let k = ens.len();
        let mut dims = self.dims.clone();
        dims[site] *= k;
        let inner: usize = self.dims[site + 1..].iter().product();
        let d = self.dims[site];
        let outer: usize = self.dims[..site].iter().product();
        let mut amps = vec![hilbert::ZERO; outer * d * k * inner];
        for (j, (p, s)) in ens.iter().enumerate() {
            let w = c(p.sqrt());
            for o in 0..outer {
                for a in 0..d {
                    for i in 0..inner {
                        let src = (o * d + a) * inner + i;
                        let dst = ((o * d + a) * k + j) * inner + i;
                        amps[dst] += w * s.amps()[src];
                    }
                }
            }
        }
        let state = PureState::normalized(dims, amps)?;
        let mut obs = self.observables.clone();
        obs[site] = obs[site].tensor_identity(k);
        let mut dev = DeviceModel::from_state(format!("{} (purified)", self.label), state, obs)?;
        dev.noise = self.noise.clone();
        Ok(dev)
    }
}

/// Graph data a preset needs to build a device.
#[derive(Debug, Clone)]
pub struct Target {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Target {
    pub fn bell() -> Self {
        Self {
            n: 2,
            edges: vec![(0, 1)],
        }
    }
}

/// A named way of building a device for a target graph.
pub trait DevicePreset: Send + Sync {
    fn name(&self) -> &'static str;

    fn summary(&self) -> &'static str;

    fn build(&self, target: &Target, param: Option<&str>) -> Result<DeviceModel>;
}

fn parse_param<T: std::str::FromStr>(
    name: &'static str,
    param: Option<&str>,
    default: T,
) -> Result<T> {
    match param {
        None => Ok(default),
        Some(p) => p
            .parse()
            .map_err(|_| Error::param(name, format!("cannot parse `{p}`"))),
    }
}

struct Honest;

impl DevicePreset for Honest {
    fn name(&self) -> &'static str {
        "honest"
    }
    fn summary(&self) -> &'static str {
        "ideal graph state with ideal observables"
    }
    fn build(&self, t: &Target, _param: Option<&str>) -> Result<DeviceModel> {
        DeviceModel::honest_graph(t.n, &t.edges)
    }
}

struct Product;

impl DevicePreset for Product {
    fn name(&self) -> &'static str {
        "product"
    }
    fn summary(&self) -> &'static str {
        "|0...0> with ideal observables"
    }
    fn build(&self, t: &Target, _param: Option<&str>) -> Result<DeviceModel> {
        let s = PureState::basis(vec![2; t.n], 0)?;
        DeviceModel::from_state("product", s, vec![SiteObservables::ideal(); t.n])
    }
}

fn uniform_basis(n: usize) -> Result<Vec<(f64, PureState)>> {
    let total = 1usize << n;
    (0..total)
        .map(|i| Ok((1.0 / total as f64, PureState::basis(vec![2; n], i)?)))
        .collect()
}

struct MaximallyMixed;

impl DevicePreset for MaximallyMixed {
    fn name(&self) -> &'static str {
        "maximally-mixed"
    }
    fn summary(&self) -> &'static str {
        "uniformly random computational basis state per copy"
    }
    fn build(&self, t: &Target, _param: Option<&str>) -> Result<DeviceModel> {
        let mix = Mixture::new(uniform_basis(t.n)?)?;
        DeviceModel::new(
            "maximally-mixed",
            Arc::new(mix),
            vec![SiteObservables::ideal(); t.n],
        )
    }
}

struct Depolarized;

impl DevicePreset for Depolarized {
    fn name(&self) -> &'static str {
        "depolarized"
    }
    fn summary(&self) -> &'static str {
        "depolarized:p, graph state with probability 1-p, maximally mixed otherwise"
    }
    fn build(&self, t: &Target, param: Option<&str>) -> Result<DeviceModel> {
        let p: f64 = parse_param("depolarized", param, 0.05)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(
                "depolarized",
                format!("p = {p} outside [0, 1]"),
            ));
        }
        let g = make_graph_state(t.n, &t.edges)?;
        let mut comps = vec![(1.0 - p, g)];
        for (w, s) in uniform_basis(t.n)? {
            comps.push((p * w, s));
        }
        comps.retain(|(w, _)| *w > 0.0);
        let mix = Mixture::new(comps)?;
        DeviceModel::new(
            format!("depolarized:{p}"),
            Arc::new(mix),
            vec![SiteObservables::ideal(); t.n],
        )
    }
}

struct Rotated;

impl DevicePreset for Rotated {
    fn name(&self) -> &'static str {
        "rotated"
    }
    fn summary(&self) -> &'static str {
        "rotated:theta, every observable's XZ-plane angle shifted by theta"
    }
    fn build(&self, t: &Target, param: Option<&str>) -> Result<DeviceModel> {
        let theta: f64 = parse_param("rotated", param, 0.05)?;
        let g = make_graph_state(t.n, &t.edges)?;
        DeviceModel::from_state(
            format!("rotated:{theta}"),
            g,
            vec![SiteObservables::shifted(theta); t.n],
        )
    }
}

struct ZFlip;

impl DevicePreset for ZFlip {
    fn name(&self) -> &'static str {
        "zflip"
    }
    fn summary(&self) -> &'static str {
        "zflip:site, graph state with Z applied to one site"
    }
    fn build(&self, t: &Target, param: Option<&str>) -> Result<DeviceModel> {
        let site: usize = parse_param("zflip", param, 0)?;
        if site >= t.n {
            return Err(Error::param("zflip", format!("site {site} out of range")));
        }
        let g = make_graph_state(t.n, &t.edges)?.apply_local(site, &gates::z())?;
        DeviceModel::from_state(
            format!("zflip:{site}"),
            g,
            vec![SiteObservables::ideal(); t.n],
        )
    }
}

struct MissingEdge;

impl DevicePreset for MissingEdge {
    fn name(&self) -> &'static str {
        "missing-edge"
    }
    fn summary(&self) -> &'static str {
        "missing-edge:i, graph state with the i-th edge (default 0) omitted"
    }
    fn build(&self, t: &Target, param: Option<&str>) -> Result<DeviceModel> {
        let idx: usize = parse_param("missing-edge", param, 0)?;
        if idx >= t.edges.len() {
            return Err(Error::param(
                "missing-edge",
                format!("graph has {} edges", t.edges.len()),
            ));
        }
        let mut edges = t.edges.clone();
        edges.remove(idx);
        let g = make_graph_state(t.n, &edges)?;
        DeviceModel::from_state(
            format!("missing-edge:{idx}"),
            g,
            vec![SiteObservables::ideal(); t.n],
        )
    }
}

struct Leaky;

impl DevicePreset for Leaky {
    fn name(&self) -> &'static str {
        "leaky"
    }
    fn summary(&self) -> &'static str {
        "leaky:eps, site 0 is a qutrit and the state leaks weight eps into level 2"
    }
    fn build(&self, t: &Target, param: Option<&str>) -> Result<DeviceModel> {
        let eps: f64 = parse_param("leaky", param, 0.0)?;
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::param("leaky", format!("eps = {eps} outside [0, 1]")));
        }
        let g = make_graph_state(t.n, &t.edges)?;
        let state = leak_first_site(&g, eps)?;
        let mut obs = vec![SiteObservables::ideal(); t.n];
        obs[0] = obs[0].padded(1);
        DeviceModel::from_state(format!("leaky:{eps}"), state, obs)
    }
}

/// Embed site 0 of a qubit state into a qutrit and mix in `|2>|+...+>`.
pub fn leak_first_site(g: &PureState, eps: f64) -> Result<PureState> {
    let mut dims = g.dims().to_vec();
    dims[0] = 3;
    let inner: usize = g.dims()[1..].iter().product();
    let mut amps = vec![hilbert::ZERO; 3 * inner];
    let keep = c((1.0 - eps).sqrt());
    for a in 0..2 {
        for i in 0..inner {
            amps[a * inner + i] = keep * g.amps()[a * inner + i];
        }
    }
    let leak = c((eps / inner as f64).sqrt());
    for i in 0..inner {
        amps[2 * inner + i] = leak;
    }
    PureState::normalized(dims, amps)
}

struct NoisyMeasurement;

impl DevicePreset for NoisyMeasurement {
    fn name(&self) -> &'static str {
        "noisy-measure"
    }
    fn summary(&self) -> &'static str {
        "noisy-measure:a, honest state, each measurement rotated by up to a rad"
    }
    fn build(&self, t: &Target, param: Option<&str>) -> Result<DeviceModel> {
        let a: f64 = parse_param("noisy-measure", param, 0.05)?;
        Ok(DeviceModel::honest_graph(t.n, &t.edges)?
            .with_noise(Arc::new(RandomRotation { max_angle: a }))
            .with_label(format!("noisy-measure:{a}")))
    }
}

/// Presets looked up by name; `name:param` passes `param` to the preset.
pub struct DeviceRegistry {
    presets: BTreeMap<&'static str, Box<dyn DevicePreset>>,
}

impl Default for DeviceRegistry {
    fn default() -> Self {
        let mut r = Self {
            presets: BTreeMap::new(),
        };
        r.register(Box::new(Honest));
        r.register(Box::new(Product));
        r.register(Box::new(MaximallyMixed));
        r.register(Box::new(Depolarized));
        r.register(Box::new(Rotated));
        r.register(Box::new(ZFlip));
        r.register(Box::new(MissingEdge));
        r.register(Box::new(Leaky));
        r.register(Box::new(NoisyMeasurement));
        r
    }
}

impl DeviceRegistry {
    pub fn register(&mut self, preset: Box<dyn DevicePreset>) {
        self.presets.insert(preset.name(), preset);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.presets.keys().copied().collect()
    }

    pub fn summaries(&self) -> Vec<(&'static str, &'static str)> {
        self.presets
            .values()
            .map(|p| (p.name(), p.summary()))
            .collect()
    }

    pub fn build(&self, spec: &str, target: &Target) -> Result<DeviceModel> {
        let (name, param) = match spec.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (spec, None),
        };
        let preset = self
            .presets
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "device",
                name: name.to_string(),
                available: self.names().join(", "),
            })?;
        preset.build(target, param)
    }
}

/// Mixed ensemble of `{G, X_s G, Y_s G, Z_s G}` weighted `1 - 3v/4, v/4, v/4, v/4`,
/// i.e. single-site depolarization of strength `v` on `site`.
pub fn site_depolarized_ensemble(
    g: &PureState,
    site: usize,
    v: f64,
) -> Result<Vec<(f64, PureState)>> {
    let mut out = vec![(1.0 - 0.75 * v, g.clone())];
    for p in [gates::x(), gates::y(), gates::z()] {
        out.push((v / 4.0, g.apply_local(site, &p)?));
    }
    out.retain(|(w, _)| *w > 0.0);
    Ok(out)
}

/// `sum_k p_k <psi_k| prod O |psi_k>` for an i.i.d. device.
pub fn ensemble_expectation(device: &DeviceModel, obs: &[(usize, Setting)]) -> Result<f64> {
    let ens = device
        .ensemble()
        .ok_or_else(|| Error::param("device", "preparation is not i.i.d."))?;
    let list: Vec<BinaryObservable> = obs
        .iter()
        .map(|&(s, t)| device.binary_observable(s, t))
        .collect();
    let refs: Vec<&BinaryObservable> = list.iter().collect();
    let mut total = 0.0;
    for (p, s) in &ens {
        total += p * s.expectation(&refs)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::max_abs;
    use rand::SeedableRng;

    #[test]
    fn honest_bell_matches_target() {
        let d = DeviceModel::honest_bell();
        assert_eq!(d.static_state().unwrap(), hilbert::bell_target());
    }

    #[test]
    fn shifted_observables_are_binary() {
        for t in [0.0, 0.1, 1.3] {
            SiteObservables::shifted(t).validate(0).unwrap();
        }
        let s0 = SiteObservables::shifted(0.0);
        assert!(max_abs(&(&s0.a0 - gates::a0())) < 1e-15);
        assert!(max_abs(&(&s0.x - gates::x())) < 1e-15);
    }

    #[test]
    fn padded_observables_are_binary() {
        SiteObservables::ideal().padded(1).validate(0).unwrap();
    }

    #[test]
    fn invalid_observables_rejected() {
        let mut o = SiteObservables::ideal();
        o.a0 = gates::x() + gates::z();
        let s = PureState::basis(vec![2], 0).unwrap();
        assert!(DeviceModel::from_state("bad", s, vec![o]).is_err());
    }

    #[test]
    fn copy_limit_enforced() {
        let d = DeviceModel::honest_bell().with_copy_limit(3);
        assert!(d.ensure_available(3).is_ok());
        assert!(matches!(
            d.ensure_available(4),
            Err(Error::InsufficientCopies { .. })
        ));
    }

    #[test]
    fn registry_builds_every_preset() {
        let r = DeviceRegistry::default();
        for name in r.names() {
            let d = r.build(name, &Target::bell()).unwrap();
            assert_eq!(d.num_sites(), 2);
        }
        assert!(matches!(
            r.build("nope", &Target::bell()),
            Err(Error::UnknownStrategy { .. })
        ));
        assert!(r.build("depolarized:x", &Target::bell()).is_err());
    }

    #[test]
    fn purification_preserves_expectations() {
        let r = DeviceRegistry::default();
        let d = r.build("depolarized:0.3", &Target::bell()).unwrap();
        let p = d.purified(1).unwrap();
        for a in Setting::ALL {
            for b in Setting::ALL {
                let e1 = ensemble_expectation(&d, &[(0, a), (1, b)]).unwrap();
                let e2 = ensemble_expectation(&p, &[(0, a), (1, b)]).unwrap();
                assert!((e1 - e2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixture_sampling_is_reproducible() {
        let r = DeviceRegistry::default();
        let d = r.build("maximally-mixed", &Target::bell()).unwrap();
        let mut a = ChaCha20Rng::seed_from_u64(3);
        let mut b = ChaCha20Rng::seed_from_u64(3);
        for k in 0..10 {
            assert_eq!(
                d.prepare_copy(k, &mut a).unwrap(),
                d.prepare_copy(k, &mut b).unwrap()
            );
        }
        assert_eq!(d.copies_prepared(), 20);
    }
}
