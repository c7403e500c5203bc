//! Synthetic measurements: true values from the case's operating point,
//! Gaussian noise, gross errors, and assignment to areas.

use std::collections::HashSet;

use nalgebra::Complex;
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::case::{AreaView, NetworkCase};
use crate::{Error, Result};

pub const DEFAULT_SIGMA_POWER: f64 = 0.004;
pub const DEFAULT_SIGMA_VMAG: f64 = 0.002;
pub const DEFAULT_SIGMA_ANGLE: f64 = 0.002;
pub const DEFAULT_BAD_DATA_FACTOR: f64 = 100.0;

/// What a meter reads. Buses are external bus ids; `branch` is the position
/// of the branch in the case, with `from`/`to` echoed for readability.
/// Flows are always metered at the `from` terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementKind {
    PInjection { bus: usize },
    QInjection { bus: usize },
    PFlow { branch: usize, from: usize, to: usize },
    QFlow { branch: usize, from: usize, to: usize },
    VSquared { bus: usize },
    PmuAngle { bus: usize },
}

impl MeasurementKind {
    pub fn p_flow(case: &NetworkCase, branch: usize) -> Self {
        let br = &case.branches[branch];
        MeasurementKind::PFlow { branch, from: br.from, to: br.to }
    }

    pub fn q_flow(case: &NetworkCase, branch: usize) -> Self {
        let br = &case.branches[branch];
        MeasurementKind::QFlow { branch, from: br.from, to: br.to }
    }

    pub fn is_power(&self) -> bool {
        !matches!(self, MeasurementKind::VSquared { .. } | MeasurementKind::PmuAngle { .. })
    }

    /// Bus id that decides the owning area: the bus itself, or the metered
    /// (`from`) terminal of a flow.
    pub fn anchor_bus(&self) -> usize {
        match *self {
            MeasurementKind::PInjection { bus }
            | MeasurementKind::QInjection { bus }
            | MeasurementKind::VSquared { bus }
            | MeasurementKind::PmuAngle { bus } => bus,
            MeasurementKind::PFlow { from, .. } | MeasurementKind::QFlow { from, .. } => from,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            MeasurementKind::PInjection { bus } => format!("P_inj({bus})"),
            MeasurementKind::QInjection { bus } => format!("Q_inj({bus})"),
            MeasurementKind::PFlow { from, to, .. } => format!("P_flow({from}-{to})"),
            MeasurementKind::QFlow { from, to, .. } => format!("Q_flow({from}-{to})"),
            MeasurementKind::VSquared { bus } => format!("V2({bus})"),
            MeasurementKind::PmuAngle { bus } => format!("theta({bus})"),
        }
    }

    /// Inverse of [`label`](Self::label). `V(i)` is accepted for `V2(i)`.
    pub fn from_label(case: &NetworkCase, label: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse measurement label {label:?}"));
        let (name, rest) = label.trim().split_once('(').ok_or_else(bad)?;
        let arg = rest.strip_suffix(')').ok_or_else(bad)?.trim();
        let bus = || -> Result<usize> {
            let id = arg.parse().map_err(|_| bad())?;
            case.require_bus(id)?;
            Ok(id)
        };
        let branch = || -> Result<usize> {
            let (f, t) = arg.split_once('-').ok_or_else(bad)?;
            let (f, t): (usize, usize) = (f.trim().parse().map_err(|_| bad())?, t.trim().parse().map_err(|_| bad())?);
            case.branches
                .iter()
                .position(|b| b.from == f && b.to == t)
                .ok_or_else(|| Error::MissingElement(format!("branch {f}-{t} (flows are metered at the from end)")))
        };
        let kind = match name.trim() {
            "P_inj" => MeasurementKind::PInjection { bus: bus()? },
            "Q_inj" => MeasurementKind::QInjection { bus: bus()? },
            "P_flow" => MeasurementKind::p_flow(case, branch()?),
            "Q_flow" => MeasurementKind::q_flow(case, branch()?),
            "V2" | "V" => MeasurementKind::VSquared { bus: bus()? },
            "theta" => MeasurementKind::PmuAngle { bus: bus()? },
            _ => return Err(bad()),
        };
        Ok(kind)
    }

    pub(crate) fn validate(&self, case: &NetworkCase) -> Result<()> {
        match *self {
            MeasurementKind::PFlow { branch, from, to } | MeasurementKind::QFlow { branch, from, to } => {
                let br = case
                    .branches
                    .get(branch)
                    .ok_or_else(|| Error::MissingElement(format!("branch {branch}")))?;
                if br.from != from || br.to != to {
                    return Err(Error::MissingElement(format!(
                        "branch {branch} is {}-{}, not {from}-{to}",
                        br.from, br.to
                    )));
                }
                Ok(())
            }
            other => case.require_bus(other.anchor_bus()).map(|_| ()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    #[serde(flatten)]
    pub kind: MeasurementKind,
    pub value: f64,
    pub sigma: f64,
    pub true_value: f64,
    pub is_bad: bool,
}

impl Measurement {
    /// Standard deviation of the modeled quantity. `sigma` refers to `|V|`
    /// for V² readings, so `σ_{V²} ≈ 2·V·σ` with `V ≈ 1`.
    pub fn model_sigma(&self) -> f64 {
        match self.kind {
            MeasurementKind::VSquared { .. } => 2.0 * self.sigma,
            _ => self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub measurements: Vec<Measurement>,
    /// External ids of buses whose injections are enforced as equality constraints.
    pub zero_injections: Vec<usize>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn bad_count(&self) -> usize {
        self.measurements.iter().filter(|m| m.is_bad).count()
    }

    pub fn position(&self, kind: &MeasurementKind) -> Option<usize> {
        self.measurements.iter().position(|m| &m.kind == kind)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measurement serialization is infallible")
    }
}

/// Named measurement plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementPlan {
    /// P/Q injections at every bus that is not zero-injection, P/Q flows at
    /// the from-end of every branch, V at every bus, plus PMU angles.
    Full { pmu_buses: Vec<usize> },
    Explicit(Vec<MeasurementKind>),
}

impl MeasurementPlan {
    pub fn full() -> Self {
        MeasurementPlan::Full { pmu_buses: Vec::new() }
    }

    pub fn kinds(&self, case: &NetworkCase) -> Vec<MeasurementKind> {
        match self {
            MeasurementPlan::Explicit(kinds) => kinds.clone(),
            MeasurementPlan::Full { pmu_buses } => {
                let mut kinds = Vec::new();
                for bus in case.buses.iter().filter(|b| !b.is_zero_injection) {
                    kinds.push(MeasurementKind::PInjection { bus: bus.id });
                    kinds.push(MeasurementKind::QInjection { bus: bus.id });
                }
                for k in 0..case.n_branches() {
                    kinds.push(MeasurementKind::p_flow(case, k));
                    kinds.push(MeasurementKind::q_flow(case, k));
                }
                kinds.extend(case.buses.iter().map(|b| MeasurementKind::VSquared { bus: b.id }));
                kinds.extend(pmu_buses.iter().map(|&bus| MeasurementKind::PmuAngle { bus }));
                kinds
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub sigma_power: f64,
    pub sigma_vmag: f64,
    pub sigma_angle: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_power: DEFAULT_SIGMA_POWER,
            sigma_vmag: DEFAULT_SIGMA_VMAG,
            sigma_angle: DEFAULT_SIGMA_ANGLE,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec { sigma_power: 0.0, sigma_vmag: 0.0, sigma_angle: 0.0, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn sigma_for(&self, kind: &MeasurementKind) -> f64 {
        match kind {
            MeasurementKind::VSquared { .. } => self.sigma_vmag,
            MeasurementKind::PmuAngle { .. } => self.sigma_angle,
            _ => self.sigma_power,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadDataSelection {
    Fraction(f64),
    Targets(Vec<MeasurementKind>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadDataSpec {
    pub selection: BadDataSelection,
    pub magnitude_factor: f64,
    pub seed: u64,
}

impl Default for BadDataSpec {
    fn default() -> Self {
        BadDataSpec::fraction(0.0, 0)
    }
}

impl BadDataSpec {
    pub fn fraction(fraction: f64, seed: u64) -> Self {
        BadDataSpec {
            selection: BadDataSelection::Fraction(fraction),
            magnitude_factor: DEFAULT_BAD_DATA_FACTOR,
            seed,
        }
    }

    pub fn targets(targets: Vec<MeasurementKind>, seed: u64) -> Self {
        BadDataSpec {
            selection: BadDataSelection::Targets(targets),
            magnitude_factor: DEFAULT_BAD_DATA_FACTOR,
            seed,
        }
    }
}

/// How `λ` relates to first-stage residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualScaling {
    /// Unweighted rows, one threshold `λ` in p.u.
    Raw,
    /// Every row divided by its standard deviation, so both the fit and the
    /// threshold act on standardized residuals.
    Sigma,
    /// Unweighted rows, threshold `λ·σ_i` per row.
    #[default]
    SigmaThreshold,
}


impl ResidualScaling {
    /// Multiplier applied to a measurement row and its value.
    pub fn row_factor(&self, m: &Measurement) -> f64 {
        match self {
            ResidualScaling::Sigma => 1.0 / m.model_sigma(),
            ResidualScaling::Raw | ResidualScaling::SigmaThreshold => 1.0,
        }
    }

    /// Multiplier applied to `λ` for this row.
    pub fn threshold_factor(&self, m: &Measurement) -> f64 {
        match self {
            ResidualScaling::SigmaThreshold => m.model_sigma(),
            ResidualScaling::Raw | ResidualScaling::Sigma => 1.0,
        }
    }
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Noise = 1,
    BadSelection = 2,
    BadMagnitude = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed for trial `trial` of a sweep started from `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(1 << 32 | trial);
    rng.next_u64()
}

fn complex_voltages(v: &[f64], theta: &[f64]) -> Vec<Complex<f64>> {
    v.iter()
        .zip(theta)
        .map(|(&m, &a)| Complex::from_polar(m, a))
        .collect()
}

/// Complex power leaving each terminal of branch `k` into the series element.
pub(crate) fn branch_end_powers(
    case: &NetworkCase,
    volts: &[Complex<f64>],
    k: usize,
) -> (Complex<f64>, Complex<f64>) {
    let br = &case.branches[k];
    let (f, t) = case.branch_ends(k);
    let y = Complex::new(br.g, br.b);
    let (vf, vt) = (volts[f], volts[t]);
    let i_from = y * (vf / br.tap - vt) / br.tap;
    let i_to = y * (vt - vf / br.tap);
    (vf * i_from.conj(), vt * i_to.conj())
}

/// Evaluates every measurement kind at a polar operating point through the
/// complex π-model power equations.
pub fn evaluate_ac(
    case: &NetworkCase,
    kinds: &[MeasurementKind],
    v: &[f64],
    theta: &[f64],
) -> Result<Vec<f64>> {
    let volts = complex_voltages(v, theta);
    let mut injections = vec![Complex::new(0.0, 0.0); case.n_buses()];
    for (i, bus) in case.buses.iter().enumerate() {
        injections[i] = volts[i].norm_sqr() * Complex::new(bus.g_sh, -bus.b_sh);
    }
    let mut from_end = Vec::with_capacity(case.n_branches());
    for k in 0..case.n_branches() {
        let (f, t) = case.branch_ends(k);
        let (sf, st) = branch_end_powers(case, &volts, k);
        injections[f] += sf;
        injections[t] += st;
        from_end.push(sf);
    }
    kinds
        .iter()
        .map(|kind| {
            kind.validate(case)?;
            Ok(match *kind {
                MeasurementKind::PInjection { bus } => injections[case.require_bus(bus)?].re,
                MeasurementKind::QInjection { bus } => injections[case.require_bus(bus)?].im,
                MeasurementKind::PFlow { branch, .. } => from_end[branch].re,
                MeasurementKind::QFlow { branch, .. } => from_end[branch].im,
                MeasurementKind::VSquared { bus } => v[case.require_bus(bus)?].powi(2),
                MeasurementKind::PmuAngle { bus } => theta[case.require_bus(bus)?],
            })
        })
        .collect()
}

/// Error-free measurements at the case's true operating point.
pub fn true_measurements(case: &NetworkCase, plan: &[MeasurementKind]) -> Result<MeasurementSet> {
    let mut seen = HashSet::new();
    for kind in plan {
        kind.validate(case)?;
        if !seen.insert(*kind) {
            return Err(Error::InvalidArgument(format!("duplicate measurement {}", kind.label())));
        }
        if let MeasurementKind::PInjection { bus } | MeasurementKind::QInjection { bus } = kind {
            if case.buses[case.require_bus(*bus)?].is_zero_injection {
                return Err(Error::InvalidArgument(format!(
                    "bus {bus} is zero-injection and is constrained, not measured"
                )));
            }
        }
        if let MeasurementKind::PmuAngle { bus } = kind {
            if *bus == case.reference_bus {
                return Err(Error::InvalidArgument("PMU angle at the reference bus".into()));
            }
        }
    }
    let values = evaluate_ac(case, plan, &case.true_magnitudes(), &case.true_angles())?;
    let defaults = NoiseSpec::default();
    let measurements = plan
        .iter()
        .zip(values)
        .map(|(kind, value)| Measurement {
            kind: *kind,
            value,
            sigma: defaults.sigma_for(kind),
            true_value: value,
            is_bad: false,
        })
        .collect();
    Ok(MeasurementSet {
        measurements,
        zero_injections: case.buses.iter().filter(|b| b.is_zero_injection).map(|b| b.id).collect(),
    })
}

/// Adds zero-mean Gaussian noise to the true values. Voltage meters read
/// `V`; the stored value is the squared noisy reading.
pub fn apply_noise(ms: &MeasurementSet, spec: &NoiseSpec) -> MeasurementSet {
    let mut rng = stream_rng(spec.seed, Stream::Noise);
    let mut out = ms.clone();
    for m in &mut out.measurements {
        let sigma = spec.sigma_for(&m.kind);
        let draw = if sigma > 0.0 {
            m.sigma = sigma;
            Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng)
        } else {
            0.0
        };
        m.value = match m.kind {
            MeasurementKind::VSquared { .. } => (m.true_value.sqrt() + draw).powi(2),
            _ => m.true_value + draw,
        };
    }
    out
}

/// Corrupts a fraction of the measurements (or an explicit list) with
/// Gaussian errors whose standard deviation is `magnitude_factor · σ`.
pub fn inject_bad_data(ms: &MeasurementSet, spec: &BadDataSpec) -> Result<MeasurementSet> {
    if !(spec.magnitude_factor > 0.0) {
        return Err(Error::InvalidArgument("bad-data magnitude factor must be positive".into()));
    }
    let targets: Vec<usize> = match &spec.selection {
        BadDataSelection::Fraction(f) => {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::InvalidArgument(format!("bad-data fraction {f} outside [0, 1]")));
            }
            let count = (f * ms.len() as f64).floor() as usize;
            let mut rng = stream_rng(spec.seed, Stream::BadSelection);
            let mut picked = sample(&mut rng, ms.len(), count).into_vec();
            picked.sort_unstable();
            picked
        }
        BadDataSelection::Targets(kinds) => kinds
            .iter()
            .map(|k| {
                ms.position(k)
                    .ok_or_else(|| Error::MissingElement(format!("bad-data target {}", k.label())))
            })
            .collect::<Result<_>>()?,
    };
    let mut rng = stream_rng(spec.seed, Stream::BadMagnitude);
    let mut out = ms.clone();
    for idx in targets {
        let m = &mut out.measurements[idx];
        let gross = Normal::new(0.0, spec.magnitude_factor * m.sigma)
            .expect("finite sigma")
            .sample(&mut rng);
        m.value = match m.kind {
            MeasurementKind::VSquared { .. } => (m.value.sqrt() + gross).powi(2),
            _ => m.value + gross,
        };
        m.is_bad = true;
    }
    Ok(out)
}

/// Measurement indices and zero-injection buses (positions) owned by one area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AreaMeasurements {
    pub area: usize,
    pub indices: Vec<usize>,
    pub zero_injections: Vec<usize>,
}

/// Injections, V² and PMU angles go to the bus's home area; flows go to the
/// home area of the metered (`from`) terminal.
pub fn partition_measurements(
    ms: &MeasurementSet,
    case: &NetworkCase,
    views: &[AreaView],
) -> Result<Vec<AreaMeasurements>> {
    let home = crate::case::home_areas(views, case.n_buses());
    let mut out: Vec<AreaMeasurements> = views
        .iter()
        .map(|v| AreaMeasurements { area: v.area, indices: Vec::new(), zero_injections: Vec::new() })
        .collect();
    for (idx, m) in ms.measurements.iter().enumerate() {
        let pos = case.require_bus(m.kind.anchor_bus())?;
        out[home[pos] - 1].indices.push(idx);
    }
    for &id in &ms.zero_injections {
        let pos = case.require_bus(id)?;
        out[home[pos] - 1].zero_injections.push(pos);
    }
    Ok(out)
}
