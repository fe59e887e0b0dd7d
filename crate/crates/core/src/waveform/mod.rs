//! Parametric three-phase fault waveforms.
//!
//! Each instance carries six channels in a fixed order
//! (`V_A, V_B, V_C, I_A, I_B, I_C`). Before the fault the voltages form a
//! balanced set 120° apart and the currents lag their voltages by the load
//! angle. From the fault sample onward, faulted phases have their voltage
//! scaled by the sag factor and their current by the surge factor; ground
//! faults additionally shift the faulted-phase currents by a DC offset.

mod io;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_dataset, read_manifest, write_dataset, FORMAT_VERSION, MANIFEST_FILE, WAVEFORM_HEADER};

pub const CHANNEL_COUNT: usize = 6;

/// Measurement channel; the discriminant is the node index in causal graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Va = 0,
    Vb = 1,
    Vc = 2,
    Ia = 3,
    Ib = 4,
    Ic = 5,
}

impl Channel {
    pub const ALL: [Channel; CHANNEL_COUNT] = [
        Channel::Va,
        Channel::Vb,
        Channel::Vc,
        Channel::Ia,
        Channel::Ib,
        Channel::Ic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Channel> {
        Self::ALL.get(index).copied()
    }

    /// Column name used in waveform files.
    pub fn column_name(self) -> &'static str {
        match self {
            Channel::Va => "Va",
            Channel::Vb => "Vb",
            Channel::Vc => "Vc",
            Channel::Ia => "Ia",
            Channel::Ib => "Ib",
            Channel::Ic => "Ic",
        }
    }

    /// Human label, e.g. `V_A`.
    pub fn label(self) -> &'static str {
        match self {
            Channel::Va => "V_A",
            Channel::Vb => "V_B",
            Channel::Vc => "V_C",
            Channel::Ia => "I_A",
            Channel::Ib => "I_B",
            Channel::Ic => "I_C",
        }
    }

    pub fn phase(self) -> Phase {
        Phase::ALL[self.index() % 3]
    }

    pub fn is_voltage(self) -> bool {
        self.index() < 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A = 0,
    B = 1,
    C = 2,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    /// Cyclic relabeling A→B→C→A.
    pub fn rotated(self) -> Phase {
        Phase::ALL[(self as usize + 1) % 3]
    }

    /// Nominal angle relative to phase A, in degrees.
    fn angle_offset_deg(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -120.0,
            Phase::C => 120.0,
        }
    }
}

/// The nine short-circuit fault types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultClass {
    AB,
    ABG,
    AG,
    BC,
    BCG,
    BG,
    CA,
    CAG,
    CG,
}

impl FaultClass {
    pub const ALL: [FaultClass; 9] = [
        FaultClass::AB,
        FaultClass::ABG,
        FaultClass::AG,
        FaultClass::BC,
        FaultClass::BCG,
        FaultClass::BG,
        FaultClass::CA,
        FaultClass::CAG,
        FaultClass::CG,
    ];

    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<FaultClass> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultClass::AB => "AB",
            FaultClass::ABG => "ABG",
            FaultClass::AG => "AG",
            FaultClass::BC => "BC",
            FaultClass::BCG => "BCG",
            FaultClass::BG => "BG",
            FaultClass::CA => "CA",
            FaultClass::CAG => "CAG",
            FaultClass::CG => "CG",
        }
    }

    pub fn affected_phases(self) -> &'static [Phase] {
        use Phase::*;
        match self {
            FaultClass::AB | FaultClass::ABG => &[A, B],
            FaultClass::BC | FaultClass::BCG => &[B, C],
            FaultClass::CA | FaultClass::CAG => &[C, A],
            FaultClass::AG => &[A],
            FaultClass::BG => &[B],
            FaultClass::CG => &[C],
        }
    }

    pub fn is_grounded(self) -> bool {
        matches!(
            self,
            FaultClass::ABG
                | FaultClass::AG
                | FaultClass::BCG
                | FaultClass::BG
                | FaultClass::CAG
                | FaultClass::CG
        )
    }

    pub fn affects(self, phase: Phase) -> bool {
        self.affected_phases().contains(&phase)
    }

    /// The fault class obtained by relabeling phases A→B→C→A.
    pub fn phase_rotated(self) -> FaultClass {
        let phases: Vec<Phase> = self.affected_phases().iter().map(|p| p.rotated()).collect();
        *FaultClass::ALL
            .iter()
            .find(|c| {
                c.is_grounded() == self.is_grounded()
                    && c.affected_phases().len() == phases.len()
                    && phases.iter().all(|p| c.affects(*p))
            })
            .expect("phase rotation maps the class set onto itself")
    }
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        FaultClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == upper)
            .ok_or_else(|| Error::param("label", format!("unknown fault class `{s}`")))
    }
}

impl Serialize for FaultClass {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for FaultClass {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive-exclusive sampling range for per-instance jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Jitter {
    pub sag_factor: Range,
    pub surge_factor: Range,
    pub fault_start_fraction: Range,
    pub noise_sigma: Range,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            sag_factor: Range::new(0.3, 0.7),
            surge_factor: Range::new(3.0, 8.0),
            fault_start_fraction: Range::new(0.3, 0.7),
            noise_sigma: Range::new(0.01, 0.05),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub base_frequency_hz: f64,
    pub sample_rate_hz: f64,
    pub sample_count: usize,
    pub amplitude_v: f64,
    pub amplitude_i: f64,
    /// Current lag behind voltage, degrees.
    pub load_angle_deg: f64,
    /// Angle of phase A at t = 0, degrees.
    pub phase_a_angle_deg: f64,
    pub fault_start_fraction: f64,
    pub sag_factor: f64,
    pub surge_factor: f64,
    pub ground_offset: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Ranges used by [`synth_dataset`] in place of the fixed fault values above.
    pub jitter: Jitter,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            base_frequency_hz: 50.0,
            sample_rate_hz: 6000.0,
            sample_count: 6001,
            amplitude_v: 1.0,
            amplitude_i: 1.0,
            load_angle_deg: 30.0,
            phase_a_angle_deg: 0.0,
            fault_start_fraction: 0.5,
            sag_factor: 0.5,
            surge_factor: 5.0,
            ground_offset: 1.0,
            noise_sigma: 0.02,
            seed: 0,
            jitter: Jitter::default(),
        }
    }
}

fn check_finite(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be finite, got {value}")))
    }
}

fn check_range(field: &'static str, range: &Range, lo: f64, hi: Option<f64>) -> Result<()> {
    check_finite(field, range.min)?;
    check_finite(field, range.max)?;
    let within = |v: f64| v > lo && hi.is_none_or(|h| v < h);
    if range.min > range.max || !within(range.min) || !within(range.max) {
        return Err(Error::param(
            field,
            format!("jitter range [{}, {}] is invalid", range.min, range.max),
        ));
    }
    Ok(())
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        check_finite("base_frequency_hz", self.base_frequency_hz)?;
        check_finite("sample_rate_hz", self.sample_rate_hz)?;
        if self.base_frequency_hz <= 0.0 {
            return Err(Error::param("base_frequency_hz", "must be positive"));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::param("sample_rate_hz", "must be positive"));
        }
        if self.sample_count < 2 {
            return Err(Error::param("sample_count", "must be at least 2"));
        }
        for (field, v) in [
            ("amplitude_v", self.amplitude_v),
            ("amplitude_i", self.amplitude_i),
        ] {
            check_finite(field, v)?;
            if v <= 0.0 {
                return Err(Error::param(field, "must be positive"));
            }
        }
        check_finite("load_angle_deg", self.load_angle_deg)?;
        check_finite("phase_a_angle_deg", self.phase_a_angle_deg)?;
        check_finite("fault_start_fraction", self.fault_start_fraction)?;
        if !(self.fault_start_fraction > 0.0 && self.fault_start_fraction < 1.0) {
            return Err(Error::param("fault_start_fraction", "must lie in (0, 1)"));
        }
        check_finite("sag_factor", self.sag_factor)?;
        if !(self.sag_factor > 0.0 && self.sag_factor < 1.0) {
            return Err(Error::param("sag_factor", "must lie in (0, 1)"));
        }
        check_finite("surge_factor", self.surge_factor)?;
        if self.surge_factor <= 1.0 {
            return Err(Error::param("surge_factor", "must exceed 1"));
        }
        check_finite("ground_offset", self.ground_offset)?;
        check_finite("noise_sigma", self.noise_sigma)?;
        if self.noise_sigma < 0.0 {
            return Err(Error::param("noise_sigma", "must be nonnegative"));
        }
        check_range("jitter.sag_factor", &self.jitter.sag_factor, 0.0, Some(1.0))?;
        check_range("jitter.surge_factor", &self.jitter.surge_factor, 1.0, None)?;
        check_range(
            "jitter.fault_start_fraction",
            &self.jitter.fault_start_fraction,
            0.0,
            Some(1.0),
        )?;
        let noise = &self.jitter.noise_sigma;
        check_finite("jitter.noise_sigma", noise.min)?;
        check_finite("jitter.noise_sigma", noise.max)?;
        if noise.min < 0.0 || noise.min > noise.max {
            return Err(Error::param("jitter.noise_sigma", "invalid range"));
        }
        Ok(())
    }

    /// First sample index affected by the fault.
    pub fn fault_sample(&self) -> usize {
        (self.fault_start_fraction * self.sample_count as f64).floor() as usize
    }
}

/// One labeled six-channel capture.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformInstance {
    pub instance_id: String,
    pub label: FaultClass,
    pub channels: [Vec<f64>; CHANNEL_COUNT],
}

impl WaveformInstance {
    pub fn new(
        instance_id: impl Into<String>,
        label: FaultClass,
        channels: [Vec<f64>; CHANNEL_COUNT],
    ) -> Result<Self> {
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Dimension("channels differ in length".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("channel {i} has a non-finite sample")));
            }
        }
        Ok(WaveformInstance {
            instance_id: instance_id.into(),
            label,
            channels,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.channels[0].len()
    }

    pub fn channel(&self, channel: Channel) -> &[f64] {
        &self.channels[channel.index()]
    }
}

/// Post-fault multiplier and offset applied to each channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultProfile {
    pub gain: [f64; CHANNEL_COUNT],
    pub offset: [f64; CHANNEL_COUNT],
}

impl FaultProfile {
    pub fn new(params: &SynthParams, label: FaultClass) -> Self {
        let mut gain = [1.0; CHANNEL_COUNT];
        let mut offset = [0.0; CHANNEL_COUNT];
        for &phase in label.affected_phases() {
            let p = phase as usize;
            gain[p] = params.sag_factor;
            gain[p + 3] = params.surge_factor;
            if label.is_grounded() {
                offset[p + 3] = params.ground_offset * params.amplitude_i;
            }
        }
        FaultProfile { gain, offset }
    }
}

/// Generates one instance. Deterministic in `(params, label)`.
pub fn synth_instance(params: &SynthParams, label: FaultClass) -> Result<WaveformInstance> {
    params.validate()?;
    let n = params.sample_count;
    let fault_at = params.fault_sample();
    let profile = FaultProfile::new(params, label);
    let omega = 2.0 * PI * params.base_frequency_hz;

    let channels: [Vec<f64>; CHANNEL_COUNT] = std::array::from_fn(|c| {
        let channel = Channel::ALL[c];
        let (amplitude, lag) = if channel.is_voltage() {
            (params.amplitude_v, 0.0)
        } else {
            (params.amplitude_i, params.load_angle_deg)
        };
        let angle_deg = (params.phase_a_angle_deg + channel.phase().angle_offset_deg() - lag)
            .rem_euclid(360.0);
        let angle = angle_deg.to_radians();
        (0..n)
            .map(|i| {
                let t = i as f64 / params.sample_rate_hz;
                let base = amplitude * (omega * t + angle).sin();
                if i >= fault_at {
                    profile.gain[c] * base + profile.offset[c]
                } else {
                    base
                }
            })
            .collect()
    });
    let mut channels = channels;

    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma)
            .map_err(|e| Error::param("noise_sigma", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for channel in channels.iter_mut() {
            for v in channel.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }

    WaveformInstance::new(format!("{label}-{:016x}", params.seed), label, channels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub instance_id: String,
    pub path: String,
    pub label: FaultClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub sample_count: usize,
    pub sample_rate_hz: f64,
    pub per_class_count: BTreeMap<FaultClass, usize>,
    pub entries: Vec<ManifestEntry>,
}

/// A generated dataset: its manifest plus the instances it lists, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub instances: Vec<WaveformInstance>,
}

/// Derives a decorrelated 64-bit seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-instance parameters for the `index`-th instance of the generated set.
pub fn instance_params(params: &SynthParams, index: u64) -> SynthParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, index));
    let jitter = &params.jitter;
    SynthParams {
        sag_factor: jitter.sag_factor.sample(&mut rng),
        surge_factor: jitter.surge_factor.sample(&mut rng),
        fault_start_fraction: jitter.fault_start_fraction.sample(&mut rng),
        noise_sigma: jitter.noise_sigma.sample(&mut rng),
        seed: rng.next_u64(),
        ..params.clone()
    }
}

/// Generates `per_class` instances of each of the nine classes.
pub fn synth_dataset(params: &SynthParams, per_class: usize) -> Result<SyntheticDataset> {
    params.validate()?;
    if per_class == 0 {
        return Err(Error::param("per_class", "must be at least 1"));
    }
    let jobs: Vec<(FaultClass, usize)> = FaultClass::ALL
        .iter()
        .flat_map(|&c| (0..per_class).map(move |i| (c, i)))
        .collect();
    let instances = jobs
        .par_iter()
        .enumerate()
        .map(|(global, &(label, i))| {
            let p = instance_params(params, global as u64);
            let mut inst = synth_instance(&p, label)?;
            inst.instance_id = format!("{label}_{i:04}");
            Ok(inst)
        })
        .collect::<Result<Vec<_>>>()?;

    let entries = instances
        .iter()
        .map(|inst| ManifestEntry {
            instance_id: inst.instance_id.clone(),
            path: format!("instances/{}.csv", inst.instance_id),
            label: inst.label,
        })
        .collect();
    let per_class_count = FaultClass::ALL.iter().map(|&c| (c, per_class)).collect();
    Ok(SyntheticDataset {
        manifest: DatasetManifest {
            format_version: io::FORMAT_VERSION,
            seed: params.seed,
            sample_count: params.sample_count,
            sample_rate_hz: params.sample_rate_hz,
            per_class_count,
            entries,
        },
        instances,
    })
}

/// Z-scores every channel using the population standard deviation.
pub fn zscore_normalize(instance: &WaveformInstance) -> Result<WaveformInstance> {
    let mut out = instance.clone();
    for (c, channel) in out.channels.iter_mut().enumerate() {
        zscore_in_place(channel).ok_or(Error::DegenerateChannel { channel: c })?;
    }
    Ok(out)
}

/// Returns `None` for an empty or constant series.
pub(crate) fn zscore_in_place(series: &mut [f64]) -> Option<()> {
    if series.is_empty() {
        return None;
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(std > 1e-12 * (1.0 + scale)) {
        return None;
    }
    for v in series.iter_mut() {
        *v = (*v - mean) / std;
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SynthParams {
        SynthParams {
            noise_sigma: 0.0,
            sample_count: 1200,
            ..SynthParams::default()
        }
    }

    fn rms(xs: &[f64]) -> f64 {
        (xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64).sqrt()
    }

    #[test]
    fn fault_class_parsing() {
        assert_eq!("abg".parse::<FaultClass>().unwrap(), FaultClass::ABG);
        assert_eq!(" Ca ".parse::<FaultClass>().unwrap(), FaultClass::CA);
        assert!("AC".parse::<FaultClass>().is_err());
        assert_eq!(FaultClass::CAG.to_string(), "CAG");
        let json = serde_json::to_string(&FaultClass::BG).unwrap();
        assert_eq!(json, "\"BG\"");
        assert_eq!(serde_json::from_str::<FaultClass>("\"bg\"").unwrap(), FaultClass::BG);
        let names: std::collections::BTreeSet<_> =
            FaultClass::ALL.iter().map(|c| c.name()).collect();
        assert_eq!(names.len(), 9);
    }

    #[test]
    fn phase_rotation_cycles() {
        for c in FaultClass::ALL {
            assert_eq!(c.phase_rotated().phase_rotated().phase_rotated(), c);
        }
        assert_eq!(FaultClass::AG.phase_rotated(), FaultClass::BG);
        assert_eq!(FaultClass::CA.phase_rotated(), FaultClass::AB);
        assert_eq!(FaultClass::BCG.phase_rotated(), FaultClass::CAG);
    }

    #[test]
    fn single_phase_fault_leaves_other_channels_pure() {
        let p = quiet();
        let inst = synth_instance(&p, FaultClass::AG).unwrap();
        let clean = synth_instance(
            &SynthParams {
                fault_start_fraction: 0.999,
                ..p.clone()
            },
            FaultClass::AG,
        )
        .unwrap();
        for ch in [Channel::Vb, Channel::Vc, Channel::Ib, Channel::Ic] {
            assert_eq!(inst.channel(ch), clean.channel(ch));
        }
        let at = p.fault_sample();
        for ch in [Channel::Va, Channel::Ia] {
            assert_eq!(inst.channel(ch)[..at], clean.channel(ch)[..at]);
            assert_ne!(inst.channel(ch)[at..], clean.channel(ch)[at..]);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let p = SynthParams {
            sample_count: 500,
            seed: 77,
            ..SynthParams::default()
        };
        let a = synth_instance(&p, FaultClass::BCG).unwrap();
        let b = synth_instance(&p, FaultClass::BCG).unwrap();
        assert_eq!(a, b);
        let c = synth_instance(&SynthParams { seed: 78, ..p }, FaultClass::BCG).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sag_rms_matches_factor() {
        // 6000 Hz / 50 Hz = 120 samples per cycle; compare whole cycles on
        // each side of the fault.
        let p = SynthParams {
            sample_count: 2400,
            fault_start_fraction: 0.5,
            sag_factor: 0.5,
            ..quiet()
        };
        let inst = synth_instance(&p, FaultClass::AB).unwrap();
        let at = p.fault_sample();
        for ch in [Channel::Va, Channel::Vb] {
            let x = inst.channel(ch);
            let ratio = rms(&x[at..]) / rms(&x[..at]);
            assert!((ratio - 0.5).abs() < 0.005, "{ch:?}: {ratio}");
        }
        let x = inst.channel(Channel::Vc);
        assert!((rms(&x[at..]) / rms(&x[..at]) - 1.0).abs() < 0.01);
    }

    #[test]
    fn cyclic_phase_relabeling_matches_rotated_generation() {
        for label in FaultClass::ALL {
            let base = quiet();
            let original = synth_instance(&base, label).unwrap();
            // Phase B of the rotated capture must carry phase A's waveform.
            let rotated = synth_instance(
                &SynthParams {
                    phase_a_angle_deg: base.phase_a_angle_deg + 120.0,
                    ..base.clone()
                },
                label.phase_rotated(),
            )
            .unwrap();
            for ch in Channel::ALL {
                let target = ch.index() / 3 * 3 + ch.phase().rotated() as usize;
                assert_eq!(original.channels[ch.index()], rotated.channels[target], "{label} {ch:?}");
            }
        }
    }

    #[test]
    fn invalid_params_name_field() {
        let cases: Vec<(SynthParams, &str)> = vec![
            (SynthParams { sample_count: 1, ..quiet() }, "sample_count"),
            (SynthParams { fault_start_fraction: 1.0, ..quiet() }, "fault_start_fraction"),
            (SynthParams { sag_factor: 1.2, ..quiet() }, "sag_factor"),
            (SynthParams { surge_factor: 1.0, ..quiet() }, "surge_factor"),
            (SynthParams { noise_sigma: -0.1, ..quiet() }, "noise_sigma"),
        ];
        for (p, field) in cases {
            match synth_instance(&p, FaultClass::AG) {
                Err(Error::Param { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected param error for {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let p = SynthParams {
            sample_count: 64,
            seed: 5,
            ..SynthParams::default()
        };
        let one = synth_dataset(&p, 1).unwrap();
        assert_eq!(one.instances.len(), 9);
        for c in FaultClass::ALL {
            assert_eq!(one.instances.iter().filter(|i| i.label == c).count(), 1);
        }
        let a = synth_dataset(&p, 100).unwrap();
        assert_eq!(a.instances.len(), 900);
        assert!(a.manifest.per_class_count.values().all(|&n| n == 100));
        let b = synth_dataset(&p, 100).unwrap();
        assert_eq!(a, b);
        let ids: std::collections::BTreeSet<_> =
            a.manifest.entries.iter().map(|e| &e.instance_id).collect();
        assert_eq!(ids.len(), 900);
        assert!(matches!(synth_dataset(&p, 0), Err(Error::Param { field: "per_class", .. })));
    }

    #[test]
    fn jitter_stays_in_range() {
        let p = SynthParams::default();
        for i in 0..200 {
            let q = instance_params(&p, i);
            assert!((0.3..0.7).contains(&q.sag_factor));
            assert!((3.0..8.0).contains(&q.surge_factor));
            assert!((0.3..0.7).contains(&q.fault_start_fraction));
            assert!((0.01..0.05).contains(&q.noise_sigma));
        }
    }

    #[test]
    fn zscore_hand_values() {
        let mut x = vec![1.0, 2.0, 3.0];
        zscore_in_place(&mut x).unwrap();
        let s = (1.5f64).sqrt();
        assert!((x[0] + s).abs() < 1e-12 && x[1].abs() < 1e-12 && (x[2] - s).abs() < 1e-12);
        assert!((x[2] - 1.2247).abs() < 1e-4);
        assert!(zscore_in_place(&mut [5.0, 5.0, 5.0]).is_none());
    }

    #[test]
    fn zscore_instance_moments_and_idempotence() {
        let inst = synth_instance(&SynthParams { sample_count: 900, ..SynthParams::default() }, FaultClass::CAG)
            .unwrap();
        let z = zscore_normalize(&inst).unwrap();
        for ch in &z.channels {
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let std = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        }
        let zz = zscore_normalize(&z).unwrap();
        for (a, b) in z.channels.iter().zip(&zz.channels) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }

    #[test]
    fn zscore_rejects_constant_channel() {
        let mut inst = synth_instance(&quiet(), FaultClass::AB).unwrap();
        inst.channels[4] = vec![5.0; inst.sample_count()];
        assert!(matches!(zscore_normalize(&inst), Err(Error::DegenerateChannel { channel: 4 })));
    }

    mod props {
        use proptest::prelude::*;

        use super::super::zscore_in_place;

        proptest! {
            #[test]
            fn zscore_standardizes_and_is_idempotent(
                values in proptest::collection::vec(-1e3f64..1e3, 2..200),
            ) {
                let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - values.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assume!(spread > 1e-3);
                let mut z = values.clone();
                zscore_in_place(&mut z).unwrap();
                let n = z.len() as f64;
                let mean = z.iter().sum::<f64>() / n;
                let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((std - 1.0).abs() < 1e-9);
                let mut again = z.clone();
                zscore_in_place(&mut again).unwrap();
                for (a, b) in z.iter().zip(&again) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
