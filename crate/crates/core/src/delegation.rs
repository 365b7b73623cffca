//! Verifier / Prover 1 / Prover 2 harness with discrete twirling.
//!
//! Prover 1 prepares copies of the graph state and rotates every qubit by
//! `U(T)`, `T` uniform in `0..8`. Prover 2 measures; the Verifier instructs
//! the basis that undoes the rotation and flips outcomes when needed. In the
//! teleport scenario Prover 1 also Bell-measures each qubit against one half
//! of a shared pair, and the reported outcomes extend the Verifier's
//! correction by the Pauli by-product.
//!
//! A correction is a dihedral map on XZ-plane angles in units of `pi/4`:
//! `U(T)` shifts by `T`, Z reflects, X reflects and shifts by 4.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::certify::{AdaptivePlan, StepRule};
use crate::device::{DeviceModel, DeviceRegistry, SiteObservables, Target};
use crate::error::{Error, Result};
use crate::graphs::ColoredGraph;
use crate::graphtest::{run_test4_on, schedule, CopyBackend, Test4Options, Test4Report};
use crate::hilbert::{
    self, apply_on_pair, apply_on_site, c, gates, outcome_distribution, Matrix, Outcome, PureState,
    Setting, C64, ZERO,
};
use crate::seed::{SeedTree, DOMAIN_TWIRL};

pub const TRANSCRIPT_SCHEMA: &str = "mbqc-selftest/delegation-transcript/1";
pub const DELEGATION_SCHEMA: &str = "mbqc-selftest/delegation-report/1";
pub const SCENARIO_SCHEMA: &str = "mbqc-selftest/scenario/1";

/// `[[cos(pi T / 8), -sin(pi T / 8)], [sin(pi T / 8), cos(pi T / 8)]]`.
pub fn twirl_unitary(t: u8) -> Result<Matrix> {
    if t > 7 {
        return Err(Error::param("T", format!("{t} is outside 0..=7")));
    }
    Ok(gates::rotation(std::f64::consts::PI * f64::from(t) / 8.0))
}

/// Sign `s` with `U(a) U(b) = s U((a + b) mod 8)`.
pub fn twirl_product_sign(a: u8, b: u8) -> i32 {
    if a + b >= 8 {
        -1
    } else {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub reflect: bool,
    pub shift: u8,
}

impl Frame {
    pub const IDENTITY: Frame = Frame {
        reflect: false,
        shift: 0,
    };

    pub fn twirl(t: u8) -> Frame {
        Frame {
            reflect: false,
            shift: t % 8,
        }
    }

    /// Conjugation by `X^x Z^z`.
    pub fn pauli(x: u8, z: u8) -> Frame {
        let zf = Frame {
            reflect: z & 1 == 1,
            shift: 0,
        };
        let xf = if x & 1 == 1 {
            Frame {
                reflect: true,
                shift: 4,
            }
        } else {
            Frame::IDENTITY
        };
        xf.compose(zf)
    }

    /// `self ∘ inner`.
    pub fn compose(self, inner: Frame) -> Frame {
        let s = if self.reflect {
            (8 - inner.shift) % 8
        } else {
            inner.shift
        };
        Frame {
            reflect: self.reflect ^ inner.reflect,
            shift: (s + self.shift) % 8,
        }
    }

    pub fn map_angle(self, j: u8) -> u8 {
        let r = if self.reflect { (8 - j % 8) % 8 } else { j % 8 };
        (r + self.shift) % 8
    }

    /// Setting to instruct and whether its outcome must be flipped.
    pub fn apply(self, setting: Setting) -> (Setting, bool) {
        let j = self.map_angle(setting.angle_index());
        (Setting::from_angle_index(j), j >= 4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Party {
    Verifier,
    Prover1,
    Prover2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    StateTransfer,
    Instruction,
    Outcome,
    TwirlVector,
    BellOutcomes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Payload {
    Prepare { copies: u64 },
    Measure { site: usize, setting: Setting },
    Request { what: String },
    Outcome { site: usize, outcome: i32 },
    Twirl { twirl: Vec<u8> },
    Transfer { sites: usize },
    Bell { outcomes: Vec<[u8; 2]> },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Prepare { .. } | Payload::Measure { .. } | Payload::Request { .. } => {
                MessageKind::Instruction
            }
            Payload::Outcome { .. } => MessageKind::Outcome,
            Payload::Twirl { .. } => MessageKind::TwirlVector,
            Payload::Transfer { .. } => MessageKind::StateTransfer,
            Payload::Bell { .. } => MessageKind::BellOutcomes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyMessage {
    /// Position in the transcript; assigned when the transcript is assembled.
    pub seq: u64,
    pub copy: Option<u64>,
    pub sender: Party,
    pub receiver: Party,
    pub kind: MessageKind,
    pub payload: Payload,
}

impl PartyMessage {
    pub fn new(copy: Option<u64>, sender: Party, receiver: Party, payload: Payload) -> Self {
        Self {
            seq: 0,
            copy,
            sender,
            receiver,
            kind: payload.kind(),
            payload,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Trusting,
    Teleport,
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trusting" => Ok(Scenario::Trusting),
            "teleport" => Ok(Scenario::Teleport),
            _ => Err(Error::param(
                "scenario",
                format!("`{s}` is not trusting or teleport"),
            )),
        }
    }
}

/// Why `msg` may not travel on the channel, if it may not.
pub fn admissible(scenario: Scenario, msg: &PartyMessage) -> std::result::Result<(), String> {
    use Party::*;
    if msg.kind != msg.payload.kind() {
        return Err("kind does not match payload".into());
    }
    if msg.sender == msg.receiver {
        return Err("sender and receiver coincide".into());
    }
    match (msg.kind, msg.sender, msg.receiver) {
        (MessageKind::Instruction, Verifier, _) => Ok(()),
        (MessageKind::Instruction, s, _) => Err(format!("instruction from {s:?}")),
        (MessageKind::TwirlVector, Verifier, Prover1) => Ok(()),
        (MessageKind::TwirlVector, s, r) => Err(format!("twirl vector {s:?} -> {r:?}")),
        (MessageKind::StateTransfer, Prover1, Prover2) if scenario == Scenario::Trusting => Ok(()),
        (MessageKind::StateTransfer, s, r) => {
            Err(format!("state transfer {s:?} -> {r:?} in {scenario:?}"))
        }
        (MessageKind::Outcome, Prover2, Verifier) => Ok(()),
        (MessageKind::Outcome, s, r) => Err(format!("outcome {s:?} -> {r:?}")),
        (MessageKind::BellOutcomes, Prover1, Verifier) if scenario == Scenario::Teleport => Ok(()),
        (MessageKind::BellOutcomes, s, r) => {
            Err(format!("Bell outcomes {s:?} -> {r:?} in {scenario:?}"))
        }
    }
}

/// Every message admissible and none hands the twirl to Prover 2.
pub fn check_discipline(scenario: Scenario, transcript: &[PartyMessage]) -> Result<()> {
    for m in transcript {
        admissible(scenario, m).map_err(|r| Error::Protocol(format!("message {}: {r}", m.seq)))?;
        if m.receiver == Party::Prover2 && matches!(m.payload, Payload::Twirl { .. }) {
            return Err(Error::Protocol(format!(
                "message {} gives Prover 2 the twirl",
                m.seq
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub copy: Option<u64>,
    pub sender: Party,
    pub receiver: Party,
    pub kind: MessageKind,
    pub reason: String,
}

/// The preparing party.
pub trait Prover1: Send + Sync {
    fn name(&self) -> &str;
    fn num_sites(&self) -> usize;
    fn ensure_available(&self, count: u64) -> Result<()>;
    fn copies_prepared(&self) -> u64;
    /// State of copy `copy` after the instructed twirl.
    fn prepare(&self, copy: u64, twirl: &[u8], rng: &mut ChaCha20Rng) -> Result<PureState>;
    /// Bell outcomes reported to the Verifier.
    fn report_bell(&self, actual: &[[u8; 2]]) -> Vec<[u8; 2]> {
        actual.to_vec()
    }
    /// Messages the party attempts outside the protocol.
    fn side_messages(&self, _copy: u64, _twirl: &[u8]) -> Vec<PartyMessage> {
        Vec::new()
    }
}

/// The measuring party. It never sees the twirl vector.
pub trait Prover2: Send + Sync {
    fn name(&self) -> &str;
    fn measure(
        &self,
        state: &PureState,
        site: usize,
        setting: Setting,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Outcome, PureState)>;
    fn observable(&self, site: usize, setting: Setting) -> Matrix;
    fn side_messages(&self, _copy: u64) -> Vec<PartyMessage> {
        Vec::new()
    }
}

fn apply_twirl(state: PureState, twirl: &[u8]) -> Result<PureState> {
    let mut s = state;
    for (site, &t) in twirl.iter().enumerate() {
        if t != 0 {
            s = s.apply_local(site, &twirl_unitary(t)?)?;
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum P1Behavior {
    Honest,
    Untwirled,
    Leaky,
    Misreport,
}

struct DevicePreparer {
    name: String,
    device: DeviceModel,
    behavior: P1Behavior,
}

impl Prover1 for DevicePreparer {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_sites(&self) -> usize {
        self.device.num_sites()
    }

    fn ensure_available(&self, count: u64) -> Result<()> {
        self.device.ensure_available(count)
    }

    fn copies_prepared(&self) -> u64 {
        self.device.copies_prepared()
    }

    fn prepare(&self, copy: u64, twirl: &[u8], rng: &mut ChaCha20Rng) -> Result<PureState> {
        let s = self.device.prepare_copy(copy, rng)?;
        if self.behavior == P1Behavior::Untwirled {
            return Ok(s);
        }
        apply_twirl(s, twirl)
    }

    fn report_bell(&self, actual: &[[u8; 2]]) -> Vec<[u8; 2]> {
        match self.behavior {
            P1Behavior::Misreport => actual.iter().map(|[z, x]| [*z, x ^ 1]).collect(),
            _ => actual.to_vec(),
        }
    }

    fn side_messages(&self, copy: u64, twirl: &[u8]) -> Vec<PartyMessage> {
        if self.behavior != P1Behavior::Leaky {
            return Vec::new();
        }
        vec![PartyMessage::new(
            Some(copy),
            Party::Prover1,
            Party::Prover2,
            Payload::Twirl {
                twirl: twirl.to_vec(),
            },
        )]
    }
}

struct DeviceMeasurer {
    name: String,
    device: DeviceModel,
    fixed: Option<Setting>,
    peek: bool,
}

impl Prover2 for DeviceMeasurer {
    fn name(&self) -> &str {
        &self.name
    }

    fn measure(
        &self,
        state: &PureState,
        site: usize,
        setting: Setting,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Outcome, PureState)> {
        self.device
            .measure(state, site, self.fixed.unwrap_or(setting), rng)
    }

    fn observable(&self, site: usize, setting: Setting) -> Matrix {
        self.device
            .observable(site, self.fixed.unwrap_or(setting))
            .clone()
    }

    fn side_messages(&self, copy: u64) -> Vec<PartyMessage> {
        if !self.peek {
            return Vec::new();
        }
        vec![PartyMessage::new(
            Some(copy),
            Party::Prover2,
            Party::Prover1,
            Payload::Request {
                what: "twirl".to_string(),
            },
        )]
    }
}

pub trait Prover1Preset: Send + Sync {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    fn build(&self, target: &Target, param: Option<&str>) -> Result<Box<dyn Prover1>>;
}

pub trait Prover2Preset: Send + Sync {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    fn build(&self, target: &Target, param: Option<&str>) -> Result<Box<dyn Prover2>>;
}

fn device_for(target: &Target, param: Option<&str>, default: &str) -> Result<DeviceModel> {
    DeviceRegistry::default().build(param.unwrap_or(default), target)
}

struct P1Preset {
    name: &'static str,
    summary: &'static str,
    behavior: P1Behavior,
    default_device: &'static str,
}

impl Prover1Preset for P1Preset {
    fn name(&self) -> &'static str {
        self.name
    }
    fn summary(&self) -> &'static str {
        self.summary
    }
    fn build(&self, target: &Target, param: Option<&str>) -> Result<Box<dyn Prover1>> {
        let device = device_for(target, param, self.default_device)?;
        Ok(Box::new(DevicePreparer {
            name: match param {
                Some(p) => format!("{}:{p}", self.name),
                None => self.name.to_string(),
            },
            device,
            behavior: self.behavior,
        }))
    }
}

struct P2Preset {
    name: &'static str,
    summary: &'static str,
    fixed: Option<Setting>,
    peek: bool,
}

impl Prover2Preset for P2Preset {
    fn name(&self) -> &'static str {
        self.name
    }
    fn summary(&self) -> &'static str {
        self.summary
    }
    fn build(&self, target: &Target, param: Option<&str>) -> Result<Box<dyn Prover2>> {
        Ok(Box::new(DeviceMeasurer {
            name: match param {
                Some(p) => format!("{}:{p}", self.name),
                None => self.name.to_string(),
            },
            device: device_for(target, param, "honest")?,
            fixed: self.fixed,
            peek: self.peek,
        }))
    }
}

/// Named prover strategies. `name:device-spec` picks the underlying device
/// preset, e.g. `honest:depolarized:0.1` or `device:product`.
pub struct AdversaryRegistry {
    prover1: BTreeMap<&'static str, Box<dyn Prover1Preset>>,
    prover2: BTreeMap<&'static str, Box<dyn Prover2Preset>>,
}

impl Default for AdversaryRegistry {
    fn default() -> Self {
        let mut r = Self {
            prover1: BTreeMap::new(),
            prover2: BTreeMap::new(),
        };
        let p1 = [
            (
                "honest",
                "prepares with the named device and twirls",
                P1Behavior::Honest,
                "honest",
            ),
            (
                "product",
                "prepares the all-zero product state and twirls",
                P1Behavior::Honest,
                "product",
            ),
            (
                "untwirled",
                "ignores the twirl instruction",
                P1Behavior::Untwirled,
                "honest",
            ),
            (
                "leaky",
                "tries to send the twirl to Prover 2",
                P1Behavior::Leaky,
                "honest",
            ),
            (
                "misreport",
                "flips the X bit of every Bell report",
                P1Behavior::Misreport,
                "honest",
            ),
        ];
        for (name, summary, behavior, default_device) in p1 {
            r.register_prover1(Box::new(P1Preset {
                name,
                summary,
                behavior,
                default_device,
            }));
        }
        let p2 = [
            ("honest", "measures with the named device", None, false),
            (
                "fixed-z",
                "measures Z whatever the instruction",
                Some(Setting::Z),
                false,
            ),
            ("peek", "asks Prover 1 for the twirl", None, true),
        ];
        for (name, summary, fixed, peek) in p2 {
            r.register_prover2(Box::new(P2Preset {
                name,
                summary,
                fixed,
                peek,
            }));
        }
        r
    }
}

impl AdversaryRegistry {
    pub fn register_prover1(&mut self, p: Box<dyn Prover1Preset>) {
        self.prover1.insert(p.name(), p);
    }

    pub fn register_prover2(&mut self, p: Box<dyn Prover2Preset>) {
        self.prover2.insert(p.name(), p);
    }

    pub fn prover1_names(&self) -> Vec<&'static str> {
        self.prover1.keys().copied().collect()
    }

    pub fn prover2_names(&self) -> Vec<&'static str> {
        self.prover2.keys().copied().collect()
    }

    pub fn build_prover1(&self, spec: &str, target: &Target) -> Result<Box<dyn Prover1>> {
        let (name, param) = split_spec(spec);
        let p = self
            .prover1
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "prover1",
                name: name.to_string(),
                available: self.prover1_names().join(", "),
            })?;
        p.build(target, param)
    }

    pub fn build_prover2(&self, spec: &str, target: &Target) -> Result<Box<dyn Prover2>> {
        let (name, param) = split_spec(spec);
        let p = self
            .prover2
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "prover2",
                name: name.to_string(),
                available: self.prover2_names().join(", "),
            })?;
        p.build(target, param)
    }
}

fn split_spec(spec: &str) -> (&str, Option<&str>) {
    match spec.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (spec, None),
    }
}

fn cnot() -> Matrix {
    let mut m = Matrix::zeros(4, 4);
    m[(0, 0)] = c(1.0);
    m[(1, 1)] = c(1.0);
    m[(2, 3)] = c(1.0);
    m[(3, 2)] = c(1.0);
    m
}

/// Amplitudes of `state ⊗ |Phi+>` after the Bell-basis rotation of `site`
/// and the first pair qubit.
fn bell_rotated(state: &PureState, site: usize) -> Result<(Vec<usize>, Vec<C64>)> {
    let n = state.num_sites();
    if site >= n || state.dims()[site] != 2 {
        return Err(Error::Dimension(format!(
            "teleport needs a qubit at site {site}"
        )));
    }
    if state.dims().iter().any(|&d| d != 2) {
        return Err(Error::Dimension("teleport needs qubit sites".into()));
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let phi = vec![c(r), ZERO, ZERO, c(r)];
    let mut dims = state.dims().to_vec();
    dims.extend([2, 2]);
    let amps = hilbert::kron_vec(state.amps(), &phi);
    let amps = apply_on_pair(&dims, &amps, site, n, &cnot());
    let amps = apply_on_site(&dims, &amps, site, &gates::hadamard());
    Ok((dims, amps))
}

/// Unnormalized state left on Prover 2's half for Bell outcome `[z, x]`,
/// moved into position `site`.
fn bell_branch(amps: &[C64], n: usize, site: usize, z: u8, x: u8) -> Vec<C64> {
    let total = n + 2;
    let mut out = vec![ZERO; 1 << n];
    for (g, slot) in out.iter_mut().enumerate() {
        let mut f = 0usize;
        for k in 0..n {
            let bit = (g >> (n - 1 - k)) & 1;
            let digit = if k == site { z as usize } else { bit };
            f |= digit << (total - 1 - k);
        }
        f |= (x as usize) << 1;
        f |= (g >> (n - 1 - site)) & 1;
        *slot = amps[f];
    }
    out
}

/// Probability and post-teleport state for each Bell outcome `[z, x]` of `site`.
pub fn teleport_branches(state: &PureState, site: usize) -> Result<Vec<([u8; 2], f64, PureState)>> {
    let (_, amps) = bell_rotated(state, site)?;
    let n = state.num_sites();
    let mut out = Vec::with_capacity(4);
    for z in 0..2u8 {
        for x in 0..2u8 {
            let v = bell_branch(&amps, n, site, z, x);
            let p = hilbert::norm_sqr(&v);
            out.push(([z, x], p, PureState::normalized(state.dims().to_vec(), v)?));
        }
    }
    Ok(out)
}

/// Teleports `site` to Prover 2; the state there is `X^x Z^z` times the input.
pub fn teleport_site(
    state: &PureState,
    site: usize,
    rng: &mut ChaCha20Rng,
) -> Result<(PureState, [u8; 2])> {
    let branches = teleport_branches(state, site)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let last = branches.len() - 1;
    for (i, (bits, p, s)) in branches.into_iter().enumerate() {
        acc += p;
        if u < acc || i == last {
            return Ok((s, bits));
        }
    }
    unreachable!("four branches")
}

#[derive(Default)]
struct CopyLog {
    frames: Vec<Frame>,
    messages: Vec<PartyMessage>,
}

/// Channel plus graph test backend driven through the two provers.
struct Harness<'a> {
    scenario: Scenario,
    p1: &'a dyn Prover1,
    p2: &'a dyn Prover2,
    twirls: Vec<Vec<u8>>,
    label: String,
    logs: Mutex<BTreeMap<u64, CopyLog>>,
    violations: Mutex<Vec<Violation>>,
}

impl Harness<'_> {
    fn send(&self, log: &mut CopyLog, msg: PartyMessage) {
        match admissible(self.scenario, &msg) {
            Ok(()) => log.messages.push(msg),
            Err(reason) => self
                .violations
                .lock()
                .expect("violation log")
                .push(Violation {
                    copy: msg.copy,
                    sender: msg.sender,
                    receiver: msg.receiver,
                    kind: msg.kind,
                    reason,
                }),
        }
    }

    fn frame(&self, copy: u64, site: usize) -> Frame {
        self.logs.lock().expect("copy log")[&copy].frames[site]
    }

    fn with_log(&self, copy: u64, f: impl FnOnce(&mut CopyLog)) {
        let mut logs = self.logs.lock().expect("copy log");
        f(logs.entry(copy).or_default());
    }
}

impl CopyBackend for Harness<'_> {
    fn label(&self) -> &str {
        &self.label
    }

    fn num_sites(&self) -> usize {
        self.p1.num_sites()
    }

    fn ensure_available(&self, count: u64) -> Result<()> {
        self.p1.ensure_available(count)
    }

    fn copies_prepared(&self) -> u64 {
        self.p1.copies_prepared()
    }

    fn prepare(&self, copy: u64, rng: &mut ChaCha20Rng) -> Result<PureState> {
        let twirl = self
            .twirls
            .get(copy as usize)
            .ok_or_else(|| Error::Protocol(format!("copy {copy} has no twirl")))?
            .clone();
        let mut log = CopyLog::default();
        self.send(
            &mut log,
            PartyMessage::new(
                Some(copy),
                Party::Verifier,
                Party::Prover1,
                Payload::Twirl {
                    twirl: twirl.clone(),
                },
            ),
        );
        let mut state = self.p1.prepare(copy, &twirl, rng)?;
        if state.num_sites() != twirl.len() {
            return Err(Error::Dimension(format!(
                "Prover 1 sent {} sites, expected {}",
                state.num_sites(),
                twirl.len()
            )));
        }
        for m in self.p1.side_messages(copy, &twirl) {
            self.send(&mut log, m);
        }
        let frames = match self.scenario {
            Scenario::Trusting => {
                self.send(
                    &mut log,
                    PartyMessage::new(
                        Some(copy),
                        Party::Prover1,
                        Party::Prover2,
                        Payload::Transfer { sites: twirl.len() },
                    ),
                );
                twirl.iter().map(|&t| Frame::twirl(t)).collect()
            }
            Scenario::Teleport => {
                let mut actual = Vec::with_capacity(twirl.len());
                for site in 0..twirl.len() {
                    let (s, bits) = teleport_site(&state, site, rng)?;
                    state = s;
                    actual.push(bits);
                }
                let reported = self.p1.report_bell(&actual);
                self.send(
                    &mut log,
                    PartyMessage::new(
                        Some(copy),
                        Party::Prover1,
                        Party::Verifier,
                        Payload::Bell {
                            outcomes: reported.clone(),
                        },
                    ),
                );
                twirl
                    .iter()
                    .zip(&reported)
                    .map(|(&t, &[z, x])| Frame::pauli(x, z).compose(Frame::twirl(t)))
                    .collect()
            }
        };
        for m in self.p2.side_messages(copy) {
            self.send(&mut log, m);
        }
        log.frames = frames;
        self.logs.lock().expect("copy log").insert(copy, log);
        Ok(state)
    }

    fn measure(
        &self,
        copy: u64,
        state: &PureState,
        site: usize,
        setting: Setting,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Outcome, PureState)> {
        let (instructed, flip) = self.frame(copy, site).apply(setting);
        let (o, post) = self.p2.measure(state, site, instructed, rng)?;
        self.with_log(copy, |log| {
            self.send(
                log,
                PartyMessage::new(
                    Some(copy),
                    Party::Verifier,
                    Party::Prover2,
                    Payload::Measure {
                        site,
                        setting: instructed,
                    },
                ),
            );
            self.send(
                log,
                PartyMessage::new(
                    Some(copy),
                    Party::Prover2,
                    Party::Verifier,
                    Payload::Outcome {
                        site,
                        outcome: o.sign(),
                    },
                ),
            );
        });
        Ok((if flip { o.flip() } else { o }, post))
    }

    fn observable(&self, copy: u64, site: usize, setting: Setting) -> Matrix {
        let (instructed, flip) = self.frame(copy, site).apply(setting);
        let m = self.p2.observable(site, instructed);
        if flip {
            -m
        } else {
            m
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractiveProofConstants {
    pub completeness: f64,
    pub soundness: f64,
}

impl Default for InteractiveProofConstants {
    fn default() -> Self {
        Self {
            completeness: 2.0 / 3.0,
            soundness: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationReport {
    pub schema: String,
    pub scenario: Scenario,
    pub prover1: String,
    pub prover2: String,
    pub m: u64,
    pub c1: f64,
    pub seed: u64,
    pub messages: usize,
    pub violations: Vec<Violation>,
    pub interactive_proof: InteractiveProofConstants,
    pub test4: Test4Report,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelegationRun {
    pub report: DelegationReport,
    pub transcript: Vec<PartyMessage>,
}

/// Per-copy twirl vectors drawn by the Verifier.
pub fn draw_twirls(copies: u64, n: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = SeedTree::new(seed).rng(&[DOMAIN_TWIRL]);
    (0..copies)
        .map(|_| (0..n).map(|_| rng.random_range(0..8u8)).collect())
        .collect()
}

pub fn run_delegation(
    graph: &ColoredGraph,
    m: u64,
    c1: f64,
    scenario: Scenario,
    prover1: &dyn Prover1,
    prover2: &dyn Prover2,
    seed: u64,
) -> Result<DelegationRun> {
    let n = graph.n();
    if prover1.num_sites() != n {
        return Err(Error::Dimension(format!(
            "Prover 1 prepares {} sites, graph has {n}",
            prover1.num_sites()
        )));
    }
    let total = schedule(graph).c3 as u64 * m + 1;
    let harness = Harness {
        scenario,
        p1: prover1,
        p2: prover2,
        twirls: draw_twirls(total, n, seed),
        label: format!(
            "delegation/{scenario:?}/{}/{}",
            prover1.name(),
            prover2.name()
        )
        .to_lowercase(),
        logs: Mutex::new(BTreeMap::new()),
        violations: Mutex::new(Vec::new()),
    };
    let opening = PartyMessage::new(
        None,
        Party::Verifier,
        Party::Prover1,
        Payload::Prepare { copies: total },
    );
    let test4 = run_test4_on(&harness, graph, &Test4Options::new(m, c1, seed))?;

    let mut transcript = vec![opening];
    for (_, log) in harness.logs.into_inner().expect("copy log") {
        transcript.extend(log.messages);
    }
    for (i, msg) in transcript.iter_mut().enumerate() {
        msg.seq = i as u64;
    }
    check_discipline(scenario, &transcript)?;
    let mut violations = harness.violations.into_inner().expect("violation log");
    violations.sort_by(|a, b| (a.copy, &a.reason).cmp(&(b.copy, &b.reason)));
    Ok(DelegationRun {
        report: DelegationReport {
            schema: DELEGATION_SCHEMA.to_string(),
            scenario,
            prover1: prover1.name().to_string(),
            prover2: prover2.name().to_string(),
            m,
            c1,
            seed,
            messages: transcript.len(),
            violations,
            interactive_proof: InteractiveProofConstants::default(),
            pass: test4.pass,
            test4,
        },
        transcript,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub schema: String,
    pub scenario: Scenario,
    pub prover1: String,
    pub prover2: String,
    pub seed: u64,
}

/// Header line followed by one message per line.
pub fn transcript_jsonl(run: &DelegationRun) -> Result<String> {
    let header = TranscriptHeader {
        schema: TRANSCRIPT_SCHEMA.to_string(),
        scenario: run.report.scenario,
        prover1: run.report.prover1.clone(),
        prover2: run.report.prover2.clone(),
        seed: run.report.seed,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for m in &run.transcript {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    Ok(out)
}

/// Scenario file contents; `graph` is a path relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema: String,
    pub scenario: Scenario,
    pub prover1: String,
    pub prover2: String,
    pub graph: String,
    pub m: u64,
    pub c1: f64,
    pub seed: u64,
}

/// Outcome distribution of `prepared` when Prover 2 measures the instructed
/// observables for `settings` under `frames` and the flips are undone.
pub fn compensated_distribution(
    observables: &[SiteObservables],
    settings: &[Setting],
    frames: &[Frame],
    prepared: &PureState,
) -> Result<Vec<f64>> {
    let owned: Vec<Matrix> = settings
        .iter()
        .zip(frames)
        .enumerate()
        .map(|(site, (&s, f))| {
            let (inst, flip) = f.apply(s);
            let m = observables[site].get(inst).clone();
            if flip {
                -m
            } else {
                m
            }
        })
        .collect();
    let obs: Vec<(usize, &Matrix)> = owned.iter().enumerate().collect();
    let mut dist = vec![0.0; 1 << settings.len()];
    for (outcomes, p) in outcome_distribution(prepared, &obs)? {
        let k = outcomes.iter().fold(0usize, |acc, o| (acc << 1) | o.bit());
        dist[k] += p;
    }
    Ok(dist)
}

/// Largest gap between the compensated distribution under `twirl` and the
/// untwirled one, for a device whose observables are ideal.
pub fn twirl_compensation_gap(
    state: &PureState,
    settings: &[Setting],
    twirl: &[u8],
) -> Result<f64> {
    let ideal = vec![SiteObservables::ideal(); state.num_sites()];
    let id_frames = vec![Frame::IDENTITY; twirl.len()];
    let base = compensated_distribution(&ideal, settings, &id_frames, state)?;
    let frames: Vec<Frame> = twirl.iter().map(|&t| Frame::twirl(t)).collect();
    let twirled = apply_twirl(state.clone(), twirl)?;
    let d = compensated_distribution(&ideal, settings, &frames, &twirled)?;
    Ok(base
        .iter()
        .zip(&d)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Counts of `(T + T') mod 8` over uniform `T'`.
pub fn masking_counts(t: u8) -> [u32; 8] {
    let mut counts = [0; 8];
    for tp in 0..8u8 {
        counts[usize::from((t + tp) % 8)] += 1;
    }
    counts
}

/// Counts of the composed correction over the four Bell outcomes.
pub fn bell_frame_counts(t: u8) -> BTreeMap<Frame, u32> {
    let mut counts = BTreeMap::new();
    for z in 0..2 {
        for x in 0..2 {
            *counts
                .entry(Frame::pauli(x, z).compose(Frame::twirl(t)))
                .or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub stage: usize,
    pub site: usize,
    pub rule: StepRule,
}

/// One stage per site in the plan's order; only the basis may depend on outcomes.
pub fn measurement_stage_schedule(graph: &ColoredGraph, plan: &AdaptivePlan) -> Result<Vec<Stage>> {
    if plan.steps() != graph.n() {
        return Err(Error::param(
            "plan",
            format!("{} steps for {} vertices", plan.steps(), graph.n()),
        ));
    }
    let checked = AdaptivePlan::new(plan.order.clone(), plan.rules.clone())?;
    Ok(checked
        .order
        .iter()
        .zip(&checked.rules)
        .enumerate()
        .map(|(stage, (&site, rule))| Stage {
            stage,
            site,
            rule: rule.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::Basis;
    use crate::graphs::{path_graph, Greedy};

    fn triangle() -> ColoredGraph {
        ColoredGraph::new(3, &[(0, 1), (1, 2), (0, 2)], vec![0, 1, 2])
            .partitioned_by(&Greedy)
            .unwrap()
    }

    fn target(g: &ColoredGraph) -> Target {
        Target {
            n: g.n(),
            edges: g.edges().to_vec(),
        }
    }

    #[test]
    fn twirl_unitary_values() {
        assert!(hilbert::max_abs(&(twirl_unitary(0).unwrap() - Matrix::identity(2, 2))) < 1e-15);
        let expect = Matrix::from_row_slice(2, 2, &[c(0.0), c(-1.0), c(1.0), c(0.0)]);
        assert!(hilbert::max_abs(&(twirl_unitary(4).unwrap() - expect)) < 1e-15);
        assert!(twirl_unitary(8).is_err());
        for t in 0..8 {
            let u = twirl_unitary(t).unwrap();
            assert!(hilbert::unitarity_defect(&u) < 1e-14);
        }
    }

    #[test]
    fn twirl_group_law() {
        for a in 0..8 {
            for b in 0..8 {
                let lhs = twirl_unitary(a).unwrap() * twirl_unitary(b).unwrap();
                let rhs =
                    twirl_unitary((a + b) % 8).unwrap() * c(f64::from(twirl_product_sign(a, b)));
                assert!(hilbert::max_abs(&(lhs - rhs)) < 1e-14, "{a} {b}");
            }
        }
    }

    #[test]
    fn frames_match_conjugation() {
        let pauli = |x: u8, z: u8| {
            let mut p = Matrix::identity(2, 2);
            if z == 1 {
                p = gates::z() * p;
            }
            if x == 1 {
                p = gates::x() * p;
            }
            p
        };
        for t in 0..8 {
            for x in 0..2 {
                for z in 0..2 {
                    let u = pauli(x, z) * twirl_unitary(t).unwrap();
                    let f = Frame::pauli(x, z).compose(Frame::twirl(t));
                    for s in Setting::ALL {
                        let (inst, flip) = f.apply(s);
                        let want = &u * s.ideal() * u.adjoint();
                        let got = if flip { -inst.ideal() } else { inst.ideal() };
                        assert!(hilbert::max_abs(&(want - got)) < 1e-12, "{t} {x} {z} {s:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn compensation_is_exact_for_every_twirl() {
        let g = triangle();
        let psi = hilbert::make_graph_state(3, g.edges()).unwrap();
        let settings = [Setting::X, Setting::Z, Setting::A1];
        for t in 0..512u32 {
            let tw = [(t >> 6) as u8 & 7, (t >> 3) as u8 & 7, t as u8 & 7];
            assert!(twirl_compensation_gap(&psi, &settings, &tw).unwrap() < 1e-12);
        }
    }

    #[test]
    fn teleport_branches_carry_pauli_byproduct() {
        let psi = hilbert::make_graph_state(3, &[(0, 1), (1, 2)]).unwrap();
        let psi = psi.apply_local(1, &twirl_unitary(3).unwrap()).unwrap();
        for site in 0..3 {
            for ([z, x], p, s) in teleport_branches(&psi, site).unwrap() {
                assert!((p - 0.25).abs() < 1e-12);
                let mut want = psi.clone();
                if z == 1 {
                    want = want.apply_local(site, &gates::z()).unwrap();
                }
                if x == 1 {
                    want = want.apply_local(site, &gates::x()).unwrap();
                }
                assert!((s.fidelity(&want) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masking_is_uniform() {
        for t in 0..8 {
            assert_eq!(masking_counts(t), [1; 8]);
            assert_eq!(bell_frame_counts(t).len(), 4);
        }
    }

    #[test]
    fn honest_trusting_run_passes() {
        let g = triangle();
        let reg = AdversaryRegistry::default();
        let p1 = reg.build_prover1("honest", &target(&g)).unwrap();
        let p2 = reg.build_prover2("honest", &target(&g)).unwrap();
        let run =
            run_delegation(&g, 4, 3.0, Scenario::Trusting, p1.as_ref(), p2.as_ref(), 3).unwrap();
        assert!(run.report.pass);
        assert!(run.report.violations.is_empty());
        assert_eq!(
            run.report.test4.copies_consumed,
            run.report.test4.graph.c3 as u64 * 4 + 1
        );
        assert!(run
            .report
            .test4
            .final_copy
            .rejection
            .iter()
            .all(|&r| r < 1e-12));
        check_discipline(Scenario::Trusting, &run.transcript).unwrap();
    }

    #[test]
    fn honest_teleport_run_passes() {
        let g = triangle();
        let reg = AdversaryRegistry::default();
        let p1 = reg.build_prover1("honest", &target(&g)).unwrap();
        let p2 = reg.build_prover2("honest", &target(&g)).unwrap();
        let run =
            run_delegation(&g, 3, 3.0, Scenario::Teleport, p1.as_ref(), p2.as_ref(), 5).unwrap();
        assert!(run.report.pass);
        assert!(run
            .report
            .test4
            .final_copy
            .rejection
            .iter()
            .all(|&r| r < 1e-12));
        assert!(run
            .transcript
            .iter()
            .any(|m| m.kind == MessageKind::BellOutcomes));
        assert!(!run
            .transcript
            .iter()
            .any(|m| m.kind == MessageKind::StateTransfer));
    }

    #[test]
    fn adversaries_are_caught() {
        let g = triangle();
        let reg = AdversaryRegistry::default();
        let honest2 = reg.build_prover2("honest", &target(&g)).unwrap();
        for (spec, scenario) in [
            ("product", Scenario::Trusting),
            ("untwirled", Scenario::Trusting),
            ("misreport", Scenario::Teleport),
        ] {
            let p1 = reg.build_prover1(spec, &target(&g)).unwrap();
            let run =
                run_delegation(&g, 10, 3.0, scenario, p1.as_ref(), honest2.as_ref(), 11).unwrap();
            assert!(!run.report.pass, "{spec}");
        }
        let honest1 = reg.build_prover1("honest", &target(&g)).unwrap();
        let fz = reg.build_prover2("fixed-z", &target(&g)).unwrap();
        let run = run_delegation(
            &g,
            10,
            3.0,
            Scenario::Trusting,
            honest1.as_ref(),
            fz.as_ref(),
            11,
        )
        .unwrap();
        assert!(!run.report.pass);
    }

    #[test]
    fn leaks_are_rejected_and_logged() {
        let g = path_graph(2).unwrap();
        let reg = AdversaryRegistry::default();
        let p1 = reg.build_prover1("leaky", &target(&g)).unwrap();
        let p2 = reg.build_prover2("peek", &target(&g)).unwrap();
        let run =
            run_delegation(&g, 2, 3.0, Scenario::Trusting, p1.as_ref(), p2.as_ref(), 1).unwrap();
        let copies = run.report.test4.copies_consumed as usize;
        assert_eq!(run.report.violations.len(), 2 * copies);
        assert!(!run
            .transcript
            .iter()
            .any(|m| m.receiver == Party::Prover2 && m.kind == MessageKind::TwirlVector));
    }

    #[test]
    fn transcripts_are_deterministic() {
        let g = triangle();
        let reg = AdversaryRegistry::default();
        let go = || {
            let p1 = reg
                .build_prover1("honest:depolarized:0.1", &target(&g))
                .unwrap();
            let p2 = reg.build_prover2("honest", &target(&g)).unwrap();
            transcript_jsonl(
                &run_delegation(&g, 2, 3.0, Scenario::Teleport, p1.as_ref(), p2.as_ref(), 9)
                    .unwrap(),
            )
            .unwrap()
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn discipline_rejects_forged_messages() {
        let forged = PartyMessage::new(
            None,
            Party::Verifier,
            Party::Prover2,
            Payload::Twirl { twirl: vec![1] },
        );
        assert!(check_discipline(Scenario::Trusting, &[forged]).is_err());
        let bell = PartyMessage::new(
            None,
            Party::Prover1,
            Party::Verifier,
            Payload::Bell { outcomes: vec![] },
        );
        assert!(check_discipline(Scenario::Trusting, std::slice::from_ref(&bell)).is_err());
        assert!(check_discipline(Scenario::Teleport, &[bell]).is_ok());
    }

    #[test]
    fn stage_schedule_follows_plan_order() {
        let g = triangle();
        let plan = AdaptivePlan::new(
            vec![2, 0, 1],
            vec![
                StepRule::Fixed { basis: Basis::X },
                StepRule::Parity {
                    depends_on: vec![0],
                    even: Basis::A0,
                    odd: Basis::A1,
                },
                StepRule::Parity {
                    depends_on: vec![0, 1],
                    even: Basis::Z,
                    odd: Basis::X,
                },
            ],
        )
        .unwrap();
        let stages = measurement_stage_schedule(&g, &plan).unwrap();
        assert_eq!(
            stages.iter().map(|s| s.site).collect::<Vec<_>>(),
            vec![2, 0, 1]
        );
        let mut seen = std::collections::BTreeSet::new();
        for h in 0..8usize {
            let hist: Vec<Outcome> = (0..3)
                .map(|j| Outcome::from_bit((h >> (2 - j)) & 1))
                .collect();
            let bases: Vec<Basis> = (0..3).map(|j| plan.basis(j, &hist)).collect();
            seen.insert(bases);
        }
        assert!(seen.len() > 1);
        let single = AdaptivePlan::fixed(&[Basis::X]);
        let one = ColoredGraph::new(1, &[], vec![0]);
        assert_eq!(measurement_stage_schedule(&one, &single).unwrap().len(), 1);
    }
}
