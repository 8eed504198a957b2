//! Launch and reentry geometry, the two-stage record/replay attacker, the Best
//! Frame Selector and the three experiment sweeps.
//!
//! All link budgets are relative: the legitimate link has unit tap gain, and
//! the replay link gain is the free-space advantage of the attacker's shorter
//! path plus a per-phase attacker chain gain. Victim noise is referenced to
//! the legitimate path.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelProfile, ChannelTap, LinkKinematics};
use crate::metrics::{self, PowerStats};
use crate::modem::{self, IqBuffer, ModemParams, Payload, DEFAULT_CARRIER_HZ};
use crate::receiver::{self, ReceiverConfig, ReceiverProfile};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Link propagation delay for a distance in km, seconds.
pub fn propagation_delay(distance_km: f64) -> f64 {
    distance_km * 1e3 / SPEED_OF_LIGHT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    #[serde(rename = "OR")]
    Orion,
    #[serde(rename = "GS1")]
    Gs1,
    #[serde(rename = "GS2")]
    Gs2,
    #[serde(rename = "GSR")]
    Gsr,
    #[serde(rename = "ADV")]
    Adv,
}

impl Node {
    fn is_ground(self) -> bool {
        matches!(self, Node::Gs1 | Node::Gs2 | Node::Gsr)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Node::Orion => "OR",
            Node::Gs1 => "GS1",
            Node::Gs2 => "GS2",
            Node::Gsr => "GSR",
            Node::Adv => "ADV",
        })
    }
}

/// Directed radio link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Link {
    pub from: Node,
    pub to: Node,
}

impl Link {
    pub const fn new(from: Node, to: Node) -> Self {
        Self { from, to }
    }

    fn tag(self) -> u64 {
        (self.from as u64) * 8 + self.to as u64
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "launch_dl", alias = "LaunchDL")]
    LaunchDl,
    #[serde(rename = "reentry_ul", alias = "ReentryUL")]
    ReentryUl,
    #[serde(rename = "reentry_dl", alias = "ReentryDL")]
    ReentryDl,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::LaunchDl => "LaunchDL",
            Phase::ReentryUl => "ReentryUL",
            Phase::ReentryDl => "ReentryDL",
        })
    }
}

/// Roles of the links in one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseLinks {
    pub source: Node,
    /// Attacked receiver.
    pub victim: Node,
    /// Receiver outside the attacker's reach, if any.
    pub secondary: Option<Node>,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::LaunchDl, Phase::ReentryUl, Phase::ReentryDl];

    pub fn links(self) -> PhaseLinks {
        match self {
            Phase::LaunchDl => PhaseLinks {
                source: Node::Orion,
                victim: Node::Gs1,
                secondary: Some(Node::Gs2),
            },
            Phase::ReentryUl => PhaseLinks {
                source: Node::Gsr,
                victim: Node::Orion,
                secondary: None,
            },
            Phase::ReentryDl => PhaseLinks {
                source: Node::Orion,
                victim: Node::Gsr,
                secondary: None,
            },
        }
    }

    pub fn legit_link(self) -> Link {
        let l = self.links();
        Link::new(l.source, l.victim)
    }

    pub fn capture_link(self) -> Link {
        Link::new(self.links().source, Node::Adv)
    }

    pub fn replay_link(self) -> Link {
        Link::new(Node::Adv, self.links().victim)
    }

    pub fn secondary_link(self) -> Option<Link> {
        let l = self.links();
        l.secondary.map(|s| Link::new(l.source, s))
    }

    /// Every link of the phase's superposition.
    pub fn all_links(self) -> Vec<Link> {
        let mut v = vec![self.legit_link()];
        v.extend(self.secondary_link());
        v.push(self.capture_link());
        v.push(self.replay_link());
        v
    }
}

/// Distances in km, speeds in m/s, angles in radians.
///
/// Launch: d1 GS1-ADV, d2 ADV-OR, d3 GS1 ground range to the OR ground track,
/// d4 GS1-OR, d5 GS1-GS2. Reentry: d1 orbit-to-entry range, d2 GSR-ADV,
/// d3 ADV-OR, d4 GSR-OR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub d1_km: f64,
    pub d2_km: f64,
    pub d3_km: f64,
    pub d4_km: f64,
    #[serde(default)]
    pub d5_km: f64,
    /// Orion altitude at the frozen instant (launch only).
    #[serde(default)]
    pub orion_altitude_km: f64,
    /// GS1 elevation angle toward Orion, degrees (launch only).
    #[serde(default)]
    pub gs1_elevation_deg: f64,
    pub orion_speed: f64,
    /// Arrival angle on Orion to ground-station links.
    pub legit_angle: f64,
    /// Arrival angle on ground-station to attacker links.
    pub ground_adv_angle: f64,
    /// Arrival angle on the Orion to attacker link.
    pub orion_adv_angle: f64,
}

impl GeometrySpec {
    pub fn launch() -> Self {
        Self {
            d1_km: 8.075,
            d2_km: 8.075,
            d3_km: 9.72,
            d4_km: 12.91,
            d5_km: 63.98,
            orion_altitude_km: 12.9,
            gs1_elevation_deg: 53.0,
            orion_speed: 467.0,
            legit_angle: 45f64.to_radians(),
            ground_adv_angle: 135f64.to_radians(),
            orion_adv_angle: 0.0,
        }
    }

    pub fn reentry() -> Self {
        Self {
            d1_km: 563.0,
            d2_km: 6.7,
            d3_km: 5.62,
            d4_km: 8.74,
            d5_km: 0.0,
            orion_altitude_km: 6.7,
            gs1_elevation_deg: 0.0,
            orion_speed: 125.0,
            legit_angle: 40f64.to_radians(),
            ground_adv_angle: 50f64.to_radians(),
            orion_adv_angle: 0.0,
        }
    }

    pub fn for_phase(phase: Phase) -> Self {
        match phase {
            Phase::LaunchDl => Self::launch(),
            Phase::ReentryUl | Phase::ReentryDl => Self::reentry(),
        }
    }

    pub fn validate(&self, phase: Phase) -> Result<()> {
        let mut dists = vec![self.d1_km, self.d2_km, self.d3_km, self.d4_km];
        if phase == Phase::LaunchDl {
            dists.push(self.d5_km);
        }
        if dists.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidParameter("distances must be > 0".into()));
        }
        for a in [self.legit_angle, self.ground_adv_angle, self.orion_adv_angle] {
            if !(0.0..2.0 * PI).contains(&a) {
                return Err(Error::InvalidParameter(format!("angle {a} outside [0, 2 pi)")));
            }
        }
        if !(self.orion_speed.is_finite() && self.orion_speed >= 0.0) {
            return Err(Error::InvalidParameter("Orion speed must be >= 0".into()));
        }
        Ok(())
    }

    /// Link length in km.
    pub fn distance(&self, phase: Phase, link: Link) -> Result<f64> {
        use Node::*;
        let pair = if link.from <= link.to {
            (link.from, link.to)
        } else {
            (link.to, link.from)
        };
        let d = match (phase, pair) {
            (Phase::LaunchDl, (Orion, Gs1)) => self.d4_km,
            (Phase::LaunchDl, (Orion, Gs2)) => {
                // GS2 sits d5 downrange of GS1; Orion is d3 downrange at altitude
                let ground = self.d5_km - self.d3_km;
                ground.hypot(self.orion_altitude_km)
            }
            (Phase::LaunchDl, (Orion, Adv)) => self.d2_km,
            (Phase::LaunchDl, (Gs1, Adv)) => self.d1_km,
            (Phase::ReentryUl | Phase::ReentryDl, (Orion, Gsr)) => self.d4_km,
            (Phase::ReentryUl | Phase::ReentryDl, (Orion, Adv)) => self.d3_km,
            (Phase::ReentryUl | Phase::ReentryDl, (Gsr, Adv)) => self.d2_km,
            _ => return Err(Error::UnknownLink(format!("{link} in {phase}"))),
        };
        Ok(d)
    }

    fn kinematics(&self, link: Link, cruise: f64, carrier: f64) -> LinkKinematics {
        let ends = [link.from, link.to];
        let has = |n: Node| ends.contains(&n);
        let (speed, angle) = if has(Node::Adv) && has(Node::Orion) {
            ((self.orion_speed - cruise).abs(), self.orion_adv_angle)
        } else if has(Node::Adv) {
            (cruise, self.ground_adv_angle)
        } else {
            (self.orion_speed, self.legit_angle)
        };
        debug_assert!(ends.iter().any(|n| n.is_ground()) || has(Node::Adv));
        LinkKinematics {
            relative_speed: speed,
            arrival_angle: angle,
            carrier_freq: carrier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlatformKind {
    #[serde(rename = "RQ4", alias = "rq4")]
    Rq4,
    #[serde(rename = "MQ9", alias = "mq9")]
    Mq9,
    #[serde(rename = "None", alias = "none")]
    None,
}

impl PlatformKind {
    /// Cruise speed in m/s (574 km/h and 444 km/h).
    pub fn cruise_speed(self) -> f64 {
        match self {
            PlatformKind::Rq4 => 574.0 / 3.6,
            PlatformKind::Mq9 => 444.0 / 3.6,
            PlatformKind::None => 0.0,
        }
    }
}

impl fmt::Display for PlatformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlatformKind::Rq4 => "RQ4",
            PlatformKind::Mq9 => "MQ9",
            PlatformKind::None => "None",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerPlatform {
    pub kind: PlatformKind,
    /// Replay transmit gain, dB.
    pub output_gain_db: f64,
    /// Capture receive gain, dB. Raises the capture SNR one for one.
    pub input_gain_db: f64,
}

impl AttackerPlatform {
    pub fn new(kind: PlatformKind, output_gain_db: f64, input_gain_db: f64) -> Self {
        Self {
            kind,
            output_gain_db,
            input_gain_db,
        }
    }

    pub fn none() -> Self {
        Self::new(PlatformKind::None, f64::NEG_INFINITY, 0.0)
    }

    pub fn is_active(&self) -> bool {
        self.kind != PlatformKind::None && self.output_gain_db > f64::NEG_INFINITY
    }
}

/// Relative link budget and channel presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBudget {
    /// Sample SNR of the legitimate path at the victim, dB.
    pub victim_snr_db: f64,
    /// Capture SNR at 0 dB attacker input gain, dB.
    pub capture_snr_db: f64,
    /// Attacker amplifier chain gain on top of the output gain, dB.
    pub attacker_chain_gain_db: f64,
    /// Second tap gain relative to the first, dB. `None` disables it.
    pub second_tap_gain_db: Option<f64>,
    pub second_tap_delay_samples: f64,
    pub second_tap_osc_samples: f64,
    pub second_tap_osc_rate_hz: f64,
}

impl LinkBudget {
    pub fn for_phase(phase: Phase) -> Self {
        Self {
            victim_snr_db: 20.0,
            capture_snr_db: 35.0,
            attacker_chain_gain_db: match phase {
                Phase::LaunchDl => 17.0,
                Phase::ReentryUl | Phase::ReentryDl => -2.0,
            },
            second_tap_gain_db: Some(-10.0),
            second_tap_delay_samples: 2.0,
            second_tap_osc_samples: 0.5,
            second_tap_osc_rate_hz: 1.0,
        }
    }
}

/// One fully specified scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub phase: Phase,
    pub geometry: GeometrySpec,
    pub attacker: AttackerPlatform,
    /// Victim receiver gain on the legitimate path, dB.
    pub legit_input_gain_db: f64,
    /// Start of the attacker's recording, seconds.
    pub record_time: f64,
    /// Start of the replay, seconds. Defaults to one frame after the record
    /// time plus the capture link delay.
    pub replay_time: Option<f64>,
    pub budget: LinkBudget,
    pub modem: ModemParams,
    pub carrier_freq: f64,
    pub payload_bits: usize,
    pub n_frames: usize,
    pub seed: u64,
}

/// Default attacker output gain of each phase's attack preset, dB.
pub fn attack_preset_gain(phase: Phase) -> f64 {
    match phase {
        Phase::LaunchDl => -45.0,
        Phase::ReentryUl | Phase::ReentryDl => -25.0,
    }
}

impl ScenarioSpec {
    /// Preset for `phase` with the given attacker platform at the phase's
    /// attack output gain and -15 dB input gain.
    pub fn preset(phase: Phase, platform: PlatformKind, seed: u64) -> Self {
        let attacker = if platform == PlatformKind::None {
            AttackerPlatform::none()
        } else {
            AttackerPlatform::new(platform, attack_preset_gain(phase), -15.0)
        };
        Self {
            phase,
            geometry: GeometrySpec::for_phase(phase),
            attacker,
            legit_input_gain_db: -15.0,
            record_time: 0.0,
            replay_time: None,
            budget: LinkBudget::for_phase(phase),
            modem: ModemParams::default(),
            carrier_freq: DEFAULT_CARRIER_HZ,
            payload_bits: 200,
            n_frames: 60,
            seed,
        }
    }

    pub fn frame_duration(&self) -> f64 {
        (self.payload_bits / 2 * self.modem.sps) as f64 / self.modem.sample_rate
    }

    /// Effective replay start time.
    pub fn replay_start(&self) -> Result<f64> {
        match self.replay_time {
            Some(t) => Ok(t),
            None => {
                let d = self.geometry.distance(self.phase, self.phase.capture_link())?;
                Ok(self.record_time + self.frame_duration() + propagation_delay(d))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.modem.validate()?;
        self.geometry.validate(self.phase)?;
        if self.payload_bits == 0 || self.payload_bits % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "payload_bits must be even and > 0, got {}",
                self.payload_bits
            )));
        }
        if self.n_frames == 0 {
            return Err(Error::InvalidParameter("n_frames must be >= 1".into()));
        }
        if !(self.record_time.is_finite() && self.record_time >= 0.0) {
            return Err(Error::InvalidParameter("record_time must be >= 0".into()));
        }
        if self.attacker.is_active() && self.replay_start()? <= self.record_time {
            return Err(Error::InvalidParameter("replay_time must follow record_time".into()));
        }
        if !(self.carrier_freq > 0.0) {
            return Err(Error::InvalidParameter("carrier must be > 0".into()));
        }
        if self.legit_input_gain_db.is_nan() {
            return Err(Error::InvalidParameter("legit gain is NaN".into()));
        }
        Ok(())
    }

    pub fn payload(&self) -> Payload {
        modem::default_payload(self.payload_bits)
    }

    /// The repeated frame stream the source transmits.
    pub fn transmit(&self) -> Result<IqBuffer> {
        let p = self.payload().repeated(self.n_frames);
        let buf = modem::transmit(&p, &self.modem)?;
        IqBuffer::with_carrier(buf.into_samples(), self.modem.sample_rate, self.carrier_freq)
    }
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Channel profile for every link of the spec's phase. With no attacker only
/// the legitimate links are built.
pub fn build_link_profiles(spec: &ScenarioSpec) -> Result<BTreeMap<Link, ChannelProfile>> {
    spec.validate()?;
    let phase = spec.phase;
    let mut links = vec![phase.legit_link()];
    links.extend(phase.secondary_link());
    if spec.attacker.is_active() {
        links.push(phase.capture_link());
        links.push(phase.replay_link());
    }
    links
        .into_iter()
        .map(|l| Ok((l, link_profile(spec, l)?)))
        .collect()
}

/// Profile of a single link of the spec's phase.
pub fn link_profile(spec: &ScenarioSpec, link: Link) -> Result<ChannelProfile> {
    let phase = spec.phase;
    if !phase.all_links().contains(&link) {
        return Err(Error::UnknownLink(format!("{link} in {phase}")));
    }
    let fs = spec.modem.sample_rate;
    let budget = &spec.budget;
    let dist = spec.geometry.distance(phase, link)?;
    let kin = spec
        .geometry
        .kinematics(link, spec.attacker.kind.cruise_speed(), spec.carrier_freq);
    let doppler = channel::doppler_shift(&kin);
    let delay = propagation_delay(dist);

    let seed = derive_seed(spec.seed, link.tag());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (gain, noise) = if link == phase.capture_link() {
        (
            1.0,
            Some(budget.capture_snr_db + spec.attacker.input_gain_db),
        )
    } else if link == phase.replay_link() {
        let legit = spec.geometry.distance(phase, phase.legit_link())?;
        (legit / dist * db_to_amp(budget.attacker_chain_gain_db), None)
    } else {
        (1.0, Some(budget.victim_snr_db))
    };

    let mut taps = vec![ChannelTap {
        mean_delay: delay,
        delay_osc_amplitude: 0.0,
        delay_osc_rate: 0.0,
        gain,
        doppler_hz: doppler,
        initial_phase: rng.random_range(0.0..2.0 * PI),
    }];
    if let Some(g2) = budget.second_tap_gain_db {
        taps.push(ChannelTap {
            mean_delay: delay + budget.second_tap_delay_samples / fs,
            delay_osc_amplitude: budget.second_tap_osc_samples / fs,
            delay_osc_rate: budget.second_tap_osc_rate_hz,
            gain: gain * db_to_amp(g2),
            doppler_hz: doppler,
            initial_phase: rng.random_range(0.0..2.0 * PI),
        });
    }
    Ok(ChannelProfile {
        taps,
        noise_snr_db: noise,
        seed: derive_seed(seed, 0xA5A5),
    })
}

fn pass(signal: &IqBuffer, profile: &ChannelProfile) -> Result<IqBuffer> {
    let real = channel::realize_for(profile, signal)?;
    channel::apply_channel(signal, &real)
}

/// Record `tx` from `record_time` through `profile` and scale it by the
/// attacker output gain.
pub fn capture_through(
    tx: &IqBuffer,
    profile: &ChannelProfile,
    record_time: f64,
    output_gain_db: f64,
) -> Result<IqBuffer> {
    let start = ((record_time * tx.sample_rate()).round() as usize).min(tx.len());
    let recorded = tx.map_samples(tx.samples()[start..].to_vec());
    if recorded.is_empty() {
        return Err(Error::Empty);
    }
    Ok(pass(&recorded, profile)?.scaled(db_to_amp(output_gain_db)))
}

/// Stage 1: the attacker's stored capture of the source transmission.
pub fn stage1_capture(spec: &ScenarioSpec, tx: &IqBuffer) -> Result<IqBuffer> {
    if !spec.attacker.is_active() {
        return Err(Error::NoAttacker);
    }
    let profile = link_profile(spec, spec.phase.capture_link())?;
    capture_through(tx, &profile, spec.record_time, spec.attacker.output_gain_db)
}

/// Combine the scaled legitimate path with a replay starting `replay_start`
/// seconds in. The result spans exactly the legitimate window.
pub fn compose(legit: &IqBuffer, legit_gain_db: f64, replay: Option<(&IqBuffer, f64)>) -> Result<IqBuffer> {
    let legit = legit.scaled(db_to_amp(legit_gain_db));
    let Some((replay, start)) = replay else {
        return Ok(legit);
    };
    let n = legit.len();
    let mut sum = channel::superpose(&[(legit, 0.0), (replay.clone(), start)])?;
    if sum.len() > n {
        sum = sum.map_samples(sum.samples()[..n].to_vec());
    }
    Ok(sum)
}

/// Stage 2: the attacked victim's input. `capture` of `None` gives the
/// no-attack reference.
pub fn stage2_compose(
    spec: &ScenarioSpec,
    legit_tx: &IqBuffer,
    capture: Option<&IqBuffer>,
) -> Result<IqBuffer> {
    let legit = pass(legit_tx, &link_profile(spec, spec.phase.legit_link())?)?;
    match capture {
        Some(cap) if spec.attacker.is_active() => {
            let replay = pass(cap, &link_profile(spec, spec.phase.replay_link())?)?;
            compose(&legit, spec.legit_input_gain_db, Some((&replay, spec.replay_start()?)))
        }
        _ => compose(&legit, spec.legit_input_gain_db, None),
    }
}

/// Which ground station a frame came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameSource {
    Gs1,
    Gs2,
}

/// Keep the frame with the higher SNR. Ties go to GS1.
pub fn best_frame_select(gs1: (Payload, f64), gs2: (Payload, f64)) -> (Payload, FrameSource) {
    if gs2.1 > gs1.1 {
        (gs2.0, FrameSource::Gs2)
    } else {
        (gs1.0, FrameSource::Gs1)
    }
}

/// Victim-side buffers of one scenario realization.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub spec: ScenarioSpec,
    pub capture: Option<IqBuffer>,
    /// Attacked (or reference) victim input.
    pub victim: IqBuffer,
    /// Same victim without the replay.
    pub reference: IqBuffer,
    /// Second ground station, launch only.
    pub secondary: Option<IqBuffer>,
    /// Legitimate link delay in samples, victim then secondary.
    pub legit_delay_samples: (f64, Option<f64>),
}

/// Run both attack stages for `spec`.
pub fn simulate(spec: &ScenarioSpec) -> Result<Simulation> {
    spec.validate()?;
    let tx = spec.transmit()?;
    let phase = spec.phase;
    let fs = spec.modem.sample_rate;
    let legit_profile = link_profile(spec, phase.legit_link())?;
    let legit = pass(&tx, &legit_profile)?;
    let reference = compose(&legit, spec.legit_input_gain_db, None)?;
    let (capture, victim) = if spec.attacker.is_active() {
        let cap = stage1_capture(spec, &tx)?;
        let replay = pass(&cap, &link_profile(spec, phase.replay_link())?)?;
        let v = compose(&legit, spec.legit_input_gain_db, Some((&replay, spec.replay_start()?)))?;
        (Some(cap), v)
    } else {
        (None, reference.clone())
    };
    let (secondary, sec_delay) = match phase.secondary_link() {
        Some(link) => {
            let p = link_profile(spec, link)?;
            let d = p.taps[0].mean_delay * fs;
            (Some(compose(&pass(&tx, &p)?, spec.legit_input_gain_db, None)?), Some(d))
        }
        None => (None, None),
    };
    Ok(Simulation {
        spec: spec.clone(),
        capture,
        victim,
        reference,
        secondary,
        legit_delay_samples: (legit_profile.taps[0].mean_delay * fs, sec_delay),
    })
}

/// Receiver outcome at one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationOutcome {
    pub ber: f64,
    pub bits: usize,
    pub snr_db: f64,
    pub lock: bool,
    /// Per-block (one frame of symbols) error counts and SNR, for selection.
    #[serde(skip)]
    pub blocks: Vec<(usize, f64)>,
}

fn receiver_for(profile: ReceiverProfile, delay_samples: f64) -> ReceiverConfig {
    let cfg = ReceiverConfig::for_profile(profile);
    match profile {
        ReceiverProfile::Baseline => cfg.with_known_offset(delay_samples),
        ReceiverProfile::Hardened => cfg,
    }
}

/// Run the receiver on one buffer against the scenario payload.
pub fn evaluate_station(
    buffer: &IqBuffer,
    spec: &ScenarioSpec,
    profile: ReceiverProfile,
    delay_samples: f64,
) -> Result<StationOutcome> {
    let cfg = receiver_for(profile, delay_samples);
    let truth = spec.payload();
    let rx = receiver::receive(buffer, &cfg, &spec.modem, Some(&truth))?;
    let al = rx.alignment.ok_or(Error::Empty)?;
    let fixed: Vec<Complex64> = rx
        .symbols
        .iter()
        .map(|s| s * Complex64::i().powu(al.rotation as u32))
        .collect();
    let reference = receiver::reference_symbols(&truth, al.offset, fixed.len())?;
    let frame_syms = spec.payload_bits / 2;
    let blocks = fixed
        .chunks(frame_syms)
        .zip(reference.chunks(frame_syms))
        .filter(|(b, _)| b.len() == frame_syms)
        .map(|(b, r)| {
            let errors = modem::qpsk_demodulate(b)
                .bits()
                .iter()
                .zip(modem::qpsk_demodulate(r).bits())
                .filter(|(x, y)| x != y)
                .count();
            let snr = if frame_syms >= metrics::MIN_SNR_SYMBOLS {
                metrics::estimate_snr(b, Some(r)).map(|s| s.db).unwrap_or(f64::NEG_INFINITY)
            } else {
                f64::NEG_INFINITY
            };
            (errors, snr)
        })
        .collect();
    Ok(StationOutcome {
        ber: al.ber(),
        bits: al.total,
        snr_db: rx.snr.map_or(f64::NAN, |s| s.db),
        lock: rx.diagnostics.lock_flag,
        blocks,
    })
}

/// Frame-by-frame selection between the two launch ground stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfsOutcome {
    pub ber: f64,
    pub gs2_fraction: f64,
}

pub fn select_frames(gs1: &StationOutcome, gs2: &StationOutcome, frame_bits: usize) -> BfsOutcome {
    let n = gs1.blocks.len().min(gs2.blocks.len());
    let mut errors = 0usize;
    let mut from_gs2 = 0usize;
    for (a, b) in gs1.blocks.iter().zip(&gs2.blocks).take(n) {
        // the selector only needs SNR and the source tag; carry error counts
        // through a dummy payload-free comparison
        let pick_gs2 = b.1 > a.1;
        if pick_gs2 {
            errors += b.0;
            from_gs2 += 1;
        } else {
            errors += a.0;
        }
    }
    let bits = n * frame_bits;
    BfsOutcome {
        ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
        gs2_fraction: if n == 0 { 0.0 } else { from_gs2 as f64 / n as f64 },
    }
}

/// Everything measured for one (spec, receiver) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub victim: StationOutcome,
    pub reference: StationOutcome,
    pub secondary: Option<StationOutcome>,
    pub bfs: Option<BfsOutcome>,
    /// Digital power windows of the victim input, normalized to the mean
    /// power of the reference input.
    pub power_windows: Vec<f64>,
}

impl RunOutcome {
    pub fn delta_snr_db(&self) -> f64 {
        self.victim.snr_db - self.reference.snr_db
    }
}

/// Evaluate a simulation with one receiver profile.
pub fn evaluate(sim: &Simulation, profile: ReceiverProfile) -> Result<RunOutcome> {
    let spec = &sim.spec;
    let (d_victim, d_sec) = sim.legit_delay_samples;
    let victim = evaluate_station(&sim.victim, spec, profile, d_victim)?;
    let reference = if spec.attacker.is_active() {
        evaluate_station(&sim.reference, spec, profile, d_victim)?
    } else {
        victim.clone()
    };
    let secondary = match (&sim.secondary, d_sec) {
        (Some(buf), Some(d)) => Some(evaluate_station(buf, spec, profile, d)?),
        _ => None,
    };
    let bfs = secondary
        .as_ref()
        .map(|gs2| select_frames(&victim, gs2, spec.payload_bits));
    let ref_power = sim.reference.mean_power();
    let power_windows = metrics::digital_power(&sim.victim, metrics::DEFAULT_POWER_WINDOW)?
        .into_iter()
        .map(|p| if ref_power > 0.0 { p / ref_power } else { p })
        .collect();
    Ok(RunOutcome {
        victim,
        reference,
        secondary,
        bfs,
        power_windows,
    })
}

/// Simulate and evaluate in one call.
pub fn run(spec: &ScenarioSpec, profile: ReceiverProfile) -> Result<RunOutcome> {
    evaluate(&simulate(spec)?, profile)
}

// ---------------------------------------------------------------------------
// experiments

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentTemplate {
    /// Experiment 1: attacker output gain.
    OutputGain,
    /// Experiment 2: attacker input gain.
    InputGain,
    /// Experiment 3: victim input gain on the legitimate path.
    LegitGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub template: ExperimentTemplate,
    /// Grid values in dB.
    pub grid: Vec<f64>,
    pub base: ScenarioSpec,
    pub receiver: ReceiverProfile,
    /// Seeds per grid point: base.seed, base.seed + 1, ...
    pub seeds: usize,
}

impl SweepSpec {
    fn point(&self, value: f64, seed: u64) -> ScenarioSpec {
        let mut s = self.base.clone();
        s.seed = seed;
        match self.template {
            ExperimentTemplate::OutputGain => s.attacker.output_gain_db = value,
            ExperimentTemplate::InputGain => s.attacker.input_gain_db = value,
            ExperimentTemplate::LegitGain => s.legit_input_gain_db = value,
        }
        s
    }

    fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base.seed.wrapping_add(i)).collect()
    }
}

/// One report row, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub phase: Phase,
    pub platform: PlatformKind,
    pub attacker_output_gain_db: Option<f64>,
    pub attacker_input_gain_db: Option<f64>,
    pub legit_input_gain_db: f64,
    pub ber_percent: f64,
    pub nonzero_ber_fraction: f64,
    pub delta_snr_db: f64,
    pub power: PowerStats,
    pub receiver_profile: ReceiverProfile,
    pub seed: u64,
    pub is_reference: bool,
    /// Launch only: GS2 BER and the frame selector's output BER, percent.
    pub gs2_ber_percent: Option<f64>,
    pub bfs_ber_percent: Option<f64>,
    pub bfs_gs2_fraction: Option<f64>,
    /// Per-seed BER fractions.
    pub seed_bers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub template: ExperimentTemplate,
    pub reference_row: ReportRow,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// Reference row first, then the grid rows.
    pub fn all_rows(&self) -> impl Iterator<Item = &ReportRow> {
        std::iter::once(&self.reference_row).chain(self.rows.iter())
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn aggregate(spec: &ScenarioSpec, receiver: ReceiverProfile, base_seed: u64, outs: &[RunOutcome], is_reference: bool) -> Result<ReportRow> {
    let pick = |o: &RunOutcome| if is_reference { o.reference.clone() } else { o.victim.clone() };
    let bers: Vec<f64> = outs.iter().map(|o| pick(o).ber).collect();
    let mut power: Vec<f64> = Vec::new();
    for o in outs {
        if is_reference {
            // reference windows sit at unit mean power by construction
            power.extend(o.power_windows.iter().map(|_| 1.0));
        } else {
            power.extend(&o.power_windows);
        }
    }
    let active = spec.attacker.is_active() && !is_reference;
    let launch = spec.phase == Phase::LaunchDl;
    Ok(ReportRow {
        phase: spec.phase,
        platform: if active { spec.attacker.kind } else { PlatformKind::None },
        attacker_output_gain_db: active.then_some(spec.attacker.output_gain_db),
        attacker_input_gain_db: active.then_some(spec.attacker.input_gain_db),
        legit_input_gain_db: spec.legit_input_gain_db,
        ber_percent: 100.0 * mean(bers.iter().copied()),
        nonzero_ber_fraction: bers.iter().filter(|b| **b > 0.0).count() as f64 / bers.len().max(1) as f64,
        delta_snr_db: if is_reference { 0.0 } else { mean(outs.iter().map(RunOutcome::delta_snr_db)) },
        power: metrics::boxplot_stats(&power)?,
        receiver_profile: receiver,
        seed: base_seed,
        is_reference,
        gs2_ber_percent: launch.then(|| 100.0 * mean(outs.iter().filter_map(|o| o.secondary.as_ref().map(|s| s.ber)))),
        bfs_ber_percent: launch.then(|| {
            100.0 * mean(outs.iter().filter_map(|o| {
                if is_reference {
                    // selection between two clean stations
                    o.secondary.as_ref().map(|g2| {
                        select_frames(&o.reference, g2, spec.payload_bits).ber
                    })
                } else {
                    o.bfs.as_ref().map(|b| b.ber)
                }
            }))
        }),
        bfs_gs2_fraction: launch.then(|| mean(outs.iter().filter_map(|o| o.bfs.as_ref().map(|b| b.gs2_fraction)))),
        seed_bers: bers,
    })
}

/// Run a sweep: every grid point over every seed, in parallel, plus the
/// no-attacker reference row.
pub fn run_experiment(sweep: &SweepSpec) -> Result<ExperimentReport> {
    if sweep.grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    if sweep.seeds == 0 {
        return Err(Error::InvalidParameter("sweep needs at least one seed".into()));
    }
    if sweep.grid.iter().any(|g| g.is_nan()) {
        return Err(Error::InvalidParameter("NaN in sweep grid".into()));
    }
    sweep.base.validate()?;
    let seeds = sweep.seed_list();
    let jobs: Vec<(usize, u64)> = (0..sweep.grid.len())
        .flat_map(|i| seeds.iter().map(move |s| (i, *s)))
        .collect();
    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|(i, s)| run(&sweep.point(sweep.grid[*i], *s), sweep.receiver))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(sweep.grid.len());
    for (i, g) in sweep.grid.iter().enumerate() {
        let chunk = &outcomes[i * seeds.len()..(i + 1) * seeds.len()];
        let spec = sweep.point(*g, sweep.base.seed);
        rows.push(aggregate(&spec, sweep.receiver, sweep.base.seed, chunk, false)?);
    }
    // the reference of the base spec; its SNR is unaffected by the grid value
    let ref_spec = sweep.point(sweep.grid[0], sweep.base.seed);
    let ref_chunk = &outcomes[..seeds.len()];
    let mut reference_row = aggregate(&ref_spec, sweep.receiver, sweep.base.seed, ref_chunk, true)?;
    reference_row.legit_input_gain_db = sweep.base.legit_input_gain_db;
    Ok(ExperimentReport {
        template: sweep.template,
        reference_row,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propagation_delay_examples() {
        assert!((propagation_delay(8.74) - 29.153e-6).abs() < 1e-9);
        assert!((propagation_delay(0.2998) - 1e-6).abs() < 1e-15);
        assert!((propagation_delay(563.0) - 1.878e-3).abs() < 1e-6);
    }

    #[test]
    fn link_counts() {
        let ul = ScenarioSpec::preset(Phase::ReentryUl, PlatformKind::Rq4, 1);
        assert_eq!(build_link_profiles(&ul).unwrap().len(), 3);
        let launch = ScenarioSpec::preset(Phase::LaunchDl, PlatformKind::Mq9, 1);
        let links: Vec<_> = build_link_profiles(&launch).unwrap().into_keys().collect();
        assert_eq!(links.len(), 4);
        for l in [
            Link::new(Node::Orion, Node::Gs1),
            Link::new(Node::Orion, Node::Gs2),
            Link::new(Node::Orion, Node::Adv),
            Link::new(Node::Adv, Node::Gs1),
        ] {
            assert!(links.contains(&l), "{l}");
        }
        let none = ScenarioSpec::preset(Phase::ReentryDl, PlatformKind::None, 1);
        let links: Vec<_> = build_link_profiles(&none).unwrap().into_keys().collect();
        assert_eq!(links, vec![Link::new(Node::Orion, Node::Gsr)]);
    }

    #[test]
    fn unknown_link_rejected() {
        let s = ScenarioSpec::preset(Phase::ReentryDl, PlatformKind::Rq4, 1);
        assert!(matches!(
            link_profile(&s, Link::new(Node::Gs1, Node::Gs2)),
            Err(Error::UnknownLink(_))
        ));
    }

    #[test]
    fn legit_doppler_matches_kinematics() {
        let s = ScenarioSpec::preset(Phase::ReentryDl, PlatformKind::Rq4, 1);
        let p = link_profile(&s, s.phase.legit_link()).unwrap();
        let want = 125.0 / SPEED_OF_LIGHT * 2.1e9 * 40f64.to_radians().cos();
        assert!((p.taps[0].doppler_hz - want).abs() < 1e-9);
        assert!((p.taps[0].mean_delay - propagation_delay(8.74)).abs() < 1e-15);
        assert_eq!(p.taps.len(), 2);
        assert!((p.taps[1].gain / p.taps[0].gain - db_to_amp(-10.0)).abs() < 1e-12);
    }

    #[test]
    fn capture_requires_attacker() {
        let s = ScenarioSpec::preset(Phase::ReentryDl, PlatformKind::None, 1);
        let tx = s.transmit().unwrap();
        assert!(matches!(stage1_capture(&s, &tx), Err(Error::NoAttacker)));
    }

    #[test]
    fn capture_identity_and_gain() {
        let s = ScenarioSpec::preset(Phase::ReentryDl, PlatformKind::Rq4, 1);
        let tx = s.transmit().unwrap();
        let cap = capture_through(&tx, &ChannelProfile::identity(), 0.0, 0.0).unwrap();
        assert_eq!(cap.samples(), tx.samples());
        let cap = capture_through(&tx, &ChannelProfile::identity(), 0.0, -45.0).unwrap();
        let ratio = cap.mean_power() / tx.mean_power();
        assert!((ratio / 10f64.powf(-4.5) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_attacker_composite_is_reference() {
        let s = ScenarioSpec::preset(Phase::ReentryDl, PlatformKind::None, 3);
        let tx = s.transmit().unwrap();
        let a = stage2_compose(&s, &tx, None).unwrap();
        let sim = simulate(&s).unwrap();
        assert_eq!(a.samples(), sim.reference.samples());
        assert_eq!(sim.victim.samples(), sim.reference.samples());
    }

    #[test]
    fn infinite_attenuation_matches_reference() {
        let mut s = ScenarioSpec::preset(Phase::ReentryUl, PlatformKind::Mq9, 3);
        s.n_frames = 5;
        let tx = s.transmit().unwrap();
        let reference = stage2_compose(&s, &tx, None).unwrap();
        let cap = stage1_capture(&s, &tx).unwrap().scaled(0.0);
        let composite = stage2_compose(&s, &tx, Some(&cap)).unwrap();
        for (a, b) in composite.samples().iter().zip(reference.samples()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn bfs_examples() {
        let a = Payload::new(vec![0, 1]).unwrap();
        let b = Payload::new(vec![1, 0]).unwrap();
        assert_eq!(best_frame_select((a.clone(), 12.0), (b.clone(), 18.0)).1, FrameSource::Gs2);
        let (p, src) = best_frame_select((a.clone(), 15.0), (b, 15.0));
        assert_eq!(src, FrameSource::Gs1);
        assert_eq!(p, a);
    }

    #[test]
    fn seeds_differ_per_link() {
        let s = ScenarioSpec::preset(Phase::LaunchDl, PlatformKind::Rq4, 9);
        let profiles = build_link_profiles(&s).unwrap();
        let mut seeds: Vec<u64> = profiles.values().map(|p| p.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 4);
    }

    #[test]
    fn empty_grid_rejected() {
        let sweep = SweepSpec {
            template: ExperimentTemplate::OutputGain,
            grid: vec![],
            base: ScenarioSpec::preset(Phase::ReentryDl, PlatformKind::Rq4, 1),
            receiver: ReceiverProfile::Baseline,
            seeds: 1,
        };
        assert!(run_experiment(&sweep).is_err());
    }

    #[test]
    fn geometry_validation() {
        let mut g = GeometrySpec::reentry();
        g.d4_km = 0.0;
        assert!(g.validate(Phase::ReentryDl).is_err());
        let mut g = GeometrySpec::launch();
        g.legit_angle = 7.0;
        assert!(g.validate(Phase::LaunchDl).is_err());
    }
}
