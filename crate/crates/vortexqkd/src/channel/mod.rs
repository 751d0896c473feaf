//! Weak-coherent-pulse decoy-state source, lossy channel, detector model
//! (efficiency, dark counts, timing-window post-selection) and the per-pulse
//! Monte Carlo session producing sifted tallies.
//!
//! Determinism contract: randomness is assigned to fixed-size pulse chunks
//! (one counter-derived ChaCha stream per chunk), so merged tallies are
//! bit-identical for any parallelism degree and any scheduling order.

pub mod analytic;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elements::QPlateCharge;
use crate::error::{QkdError, Result};
use crate::protocol::{expected_detector, DetectorId, MubBasis, MubLabel};
use crate::state::OamTruncation;

/// Pulses per random-stream chunk; fixed so that results are independent of
/// the parallelism degree.
pub const CHUNK_PULSES: u64 = 1 << 16;

/// Intensity classes of the vacuum+weak decoy method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [
        IntensityClass::Signal,
        IntensityClass::Decoy,
        IntensityClass::Vacuum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IntensityClass::Signal => "signal",
            IntensityClass::Decoy => "decoy",
            IntensityClass::Vacuum => "vacuum",
        }
    }
}

/// Probabilities of emitting each intensity class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityProbs {
    pub signal: f64,
    pub decoy: f64,
    pub vacuum: f64,
}

impl IntensityProbs {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.signal, self.decoy, self.vacuum];
        if vals.iter().any(|p| *p < 0.0) {
            return Err(QkdError::InvalidInput(
                "intensity probabilities must be non-negative".into(),
            ));
        }
        let sum: f64 = vals.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(QkdError::InvalidInput(format!(
                "intensity probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn get(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Signal => self.signal,
            IntensityClass::Decoy => self.decoy,
            IntensityClass::Vacuum => self.vacuum,
        }
    }
}

/// Channel and source parameters of one Monte Carlo session.
///
/// `eta` is the end-to-end transmittance excluding the intrinsic 50%
/// single-mode-fiber filtering loss, which is already part of the Born
/// probabilities of the measurement model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mu: f64,
    pub nu: f64,
    pub intensity_probs: IntensityProbs,
    pub eta: f64,
    pub dark_rate_hz: f64,
    pub window_ns: f64,
    pub jitter_fwhm_ps: f64,
    pub path_delay_ns: f64,
    pub misalignment_delta_rad: f64,
    pub pulses: u64,
    pub seed: u64,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > self.nu && self.nu >= 0.0) {
            return Err(QkdError::InvalidInput(format!(
                "need mu > nu >= 0, got mu = {}, nu = {}",
                self.mu, self.nu
            )));
        }
        self.intensity_probs.validate()?;
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(QkdError::InvalidInput(format!(
                "eta must lie in (0, 1], got {}",
                self.eta
            )));
        }
        if self.dark_rate_hz < 0.0 {
            return Err(QkdError::InvalidInput("dark rate must be >= 0".into()));
        }
        for (name, v) in [
            ("window_ns", self.window_ns),
            ("jitter_fwhm_ps", self.jitter_fwhm_ps),
            ("path_delay_ns", self.path_delay_ns),
        ] {
            if v <= 0.0 {
                return Err(QkdError::InvalidInput(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.pulses == 0 {
            return Err(QkdError::InvalidInput("pulses must be >= 1".into()));
        }
        // fail early if the linearized dark model does not apply
        effective_dark_rate(self.dark_rate_hz, self.window_ns)?;
        Ok(())
    }

    pub fn mean_photons(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Signal => self.mu,
            IntensityClass::Decoy => self.nu,
            IntensityClass::Vacuum => 0.0,
        }
    }

    /// Session calibrated to the reference operating point: `eta` solved so
    /// the expected signal gain hits the measured value, misalignment solved
    /// for the measured mean QBER.
    pub fn paper_calibrated(
        charge: QPlateCharge,
        truncation: OamTruncation,
        pulses: u64,
        seed: u64,
    ) -> Result<SessionConfig> {
        use crate::presets;
        let delta =
            crate::protocol::calibrate_misalignment(presets::TARGET_QBER, charge, truncation)?;
        let mut config = SessionConfig {
            mu: presets::MU,
            nu: presets::NU,
            intensity_probs: IntensityProbs {
                signal: presets::INTENSITY_PROBS.0,
                decoy: presets::INTENSITY_PROBS.1,
                vacuum: presets::INTENSITY_PROBS.2,
            },
            eta: 0.1, // placeholder, replaced by the calibration below
            dark_rate_hz: presets::DARK_RATE_HZ,
            window_ns: presets::WINDOW_NS,
            jitter_fwhm_ps: presets::JITTER_FWHM_PS,
            path_delay_ns: presets::PATH_DELAY_NS,
            misalignment_delta_rad: delta,
            pulses,
            seed,
        };
        config.eta = analytic::calibrate_eta(&config, charge, truncation, presets::Q_MU)?;
        config.validate()?;
        Ok(config)
    }
}

/// Per-pulse per-detector dark click probability: rate times window,
/// linearized (valid only for rate * window << 1).
pub fn effective_dark_rate(rate_hz: f64, window_ns: f64) -> Result<f64> {
    if rate_hz < 0.0 || window_ns < 0.0 {
        return Err(QkdError::InvalidInput(
            "dark rate and window must be >= 0".into(),
        ));
    }
    let p = rate_hz * window_ns * 1e-9;
    if p > 0.01 {
        return Err(QkdError::ModelValidity(format!(
            "rate x window = {p:.3e} exceeds 0.01; linearized dark model invalid"
        )));
    }
    Ok(p)
}

/// Probability that a detection falls inside the centered post-selection
/// window: integral of a Gaussian arrival-time spread with the given FWHM
/// over [-window/2, +window/2].
pub fn window_acceptance(jitter_fwhm_ps: f64, window_ns: f64) -> f64 {
    if window_ns <= 0.0 {
        return 0.0;
    }
    if jitter_fwhm_ps <= 0.0 {
        return 1.0;
    }
    let sigma_ns = jitter_fwhm_ps * 1e-3 / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    libm::erf(0.5 * window_ns / (sigma_ns * std::f64::consts::SQRT_2))
}

/// Everything sampled about one transmitted pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseRecord {
    pub index: u64,
    pub class: IntensityClass,
    pub alice: MubLabel,
    pub bob_basis: MubBasis,
    /// Photon number drawn for this pulse (simulator ground truth).
    pub photons: u32,
    /// Bitmask of clicked detectors (bit i = DetectorId with index i).
    pub clicks: u8,
    /// Outcome after double-click squashing; `None` when nothing clicked.
    pub resolved: Option<DetectorId>,
    pub double_click: bool,
    pub sifted: bool,
    pub error: bool,
}

impl PulseRecord {
    pub fn detected(&self) -> bool {
        self.resolved.is_some()
    }

    pub fn clicked(&self, d: DetectorId) -> bool {
        self.clicks >> d.index() & 1 == 1
    }
}

/// Keeps matched-basis records with a resolved outcome.
pub fn sift(records: &[PulseRecord]) -> Vec<PulseRecord> {
    records
        .iter()
        .filter(|r| r.resolved.is_some() && r.alice.basis == r.bob_basis)
        .copied()
        .collect()
}

/// Counts accumulated for one intensity class.  The `*_single` fields count
/// the same events restricted to pulses that carried exactly one photon;
/// they are simulator ground truth used to validate the decoy bounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTally {
    pub sent: u64,
    pub detected: u64,
    pub sifted: u64,
    pub errors: u64,
    pub double_clicks: u64,
    pub detected_single: u64,
    pub sifted_single: u64,
    pub errors_single: u64,
}

impl ClassTally {
    /// Gain: detections per sent pulse, counted before basis sifting (the
    /// decoy-state convention; sifting enters the rate only through q_m).
    pub fn gain(&self) -> f64 {
        self.detected as f64 / self.sent as f64
    }

    pub fn qber(&self) -> f64 {
        self.errors as f64 / self.sifted as f64
    }

    pub fn se_gain(&self) -> f64 {
        let q = self.gain();
        (q * (1.0 - q) / self.sent as f64).sqrt()
    }

    pub fn se_qber(&self) -> f64 {
        let e = self.qber();
        (e * (1.0 - e) / self.sifted as f64).sqrt()
    }

    fn absorb(&mut self, other: &ClassTally) {
        self.sent += other.sent;
        self.detected += other.detected;
        self.sifted += other.sifted;
        self.errors += other.errors;
        self.double_clicks += other.double_clicks;
        self.detected_single += other.detected_single;
        self.sifted_single += other.sifted_single;
        self.errors_single += other.errors_single;
    }

    fn record(&mut self, r: &PulseRecord) {
        self.sent += 1;
        let single = r.photons == 1;
        if r.detected() {
            self.detected += 1;
            if single {
                self.detected_single += 1;
            }
        }
        if r.double_click {
            self.double_clicks += 1;
        }
        if r.sifted {
            self.sifted += 1;
            if single {
                self.sifted_single += 1;
            }
            if r.error {
                self.errors += 1;
                if single {
                    self.errors_single += 1;
                }
            }
        }
    }
}

/// Accumulated counts per intensity class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyTable {
    pub signal: ClassTally,
    pub decoy: ClassTally,
    pub vacuum: ClassTally,
}

impl TallyTable {
    pub fn class(&self, class: IntensityClass) -> &ClassTally {
        match class {
            IntensityClass::Signal => &self.signal,
            IntensityClass::Decoy => &self.decoy,
            IntensityClass::Vacuum => &self.vacuum,
        }
    }

    fn class_mut(&mut self, class: IntensityClass) -> &mut ClassTally {
        match class {
            IntensityClass::Signal => &mut self.signal,
            IntensityClass::Decoy => &mut self.decoy,
            IntensityClass::Vacuum => &mut self.vacuum,
        }
    }

    pub fn record(&mut self, r: &PulseRecord) {
        self.class_mut(r.class).record(r);
    }

    pub fn absorb(&mut self, other: &TallyTable) {
        self.signal.absorb(&other.signal);
        self.decoy.absorb(&other.decoy);
        self.vacuum.absorb(&other.vacuum);
    }

    pub fn total_sent(&self) -> u64 {
        self.signal.sent + self.decoy.sent + self.vacuum.sent
    }
}

/// Derived per-class numbers serialized into the tally JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub sent: u64,
    pub detected: u64,
    pub sifted: u64,
    pub errors: u64,
    pub double_clicks: u64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub e: f64,
    #[serde(rename = "se_Q")]
    pub se_q: f64,
    pub se_e: f64,
    pub ground_truth: GroundTruthReport,
}

/// Simulator-only single-photon ground truth for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthReport {
    pub detected_single: u64,
    pub sifted_single: u64,
    pub errors_single: u64,
}

/// JSON form of a [`TallyTable`]; the gain convention is spelled out because
/// the reference experiment leaves it implicit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TallyReport {
    pub schema_version: u32,
    pub gain_convention: String,
    pub seed: u64,
    pub pulses: u64,
    pub signal: ClassReport,
    pub decoy: ClassReport,
    pub vacuum: ClassReport,
}

impl TallyReport {
    pub fn from_tally(tally: &TallyTable, config: &SessionConfig) -> TallyReport {
        let mk = |c: &ClassTally| ClassReport {
            sent: c.sent,
            detected: c.detected,
            sifted: c.sifted,
            errors: c.errors,
            double_clicks: c.double_clicks,
            q: if c.sent > 0 { c.gain() } else { 0.0 },
            e: if c.sifted > 0 { c.qber() } else { 0.0 },
            se_q: if c.sent > 0 { c.se_gain() } else { 0.0 },
            se_e: if c.sifted > 0 { c.se_qber() } else { 0.0 },
            ground_truth: GroundTruthReport {
                detected_single: c.detected_single,
                sifted_single: c.sifted_single,
                errors_single: c.errors_single,
            },
        };
        TallyReport {
            schema_version: 1,
            gain_convention: "detections over all sent pulses, before basis sifting".into(),
            seed: config.seed,
            pulses: config.pulses,
            signal: mk(&tally.signal),
            decoy: mk(&tally.decoy),
            vacuum: mk(&tally.vacuum),
        }
    }
}

/// Precomputed sampling tables for one session.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    config: SessionConfig,
    /// Per-photon per-detector click probability, indexed
    /// [label 0..8][bob basis 0..2][detector 0..4].
    click_p: [[[f64; 4]; 2]; 8],
    dark: f64,
    poisson_signal: Poisson<f64>,
    poisson_decoy: Option<Poisson<f64>>,
}

impl ChannelModel {
    pub fn new(
        config: &SessionConfig,
        charge: QPlateCharge,
        truncation: OamTruncation,
    ) -> Result<Self> {
        config.validate()?;
        let born = analytic::born_click_table(config.misalignment_delta_rad, charge, truncation)?;
        let wa = window_acceptance(config.jitter_fwhm_ps, config.window_ns);
        let mut click_p = born;
        for label in &mut click_p {
            for basis in label.iter_mut() {
                for p in basis.iter_mut() {
                    *p *= config.eta * wa;
                }
            }
        }
        let poisson_decoy = if config.nu > 0.0 {
            Some(Poisson::new(config.nu).map_err(|e| {
                QkdError::InvalidInput(format!("invalid decoy mean photon number: {e}"))
            })?)
        } else {
            None
        };
        Ok(ChannelModel {
            config: *config,
            click_p,
            dark: effective_dark_rate(config.dark_rate_hz, config.window_ns)?,
            poisson_signal: Poisson::new(config.mu).map_err(|e| {
                QkdError::InvalidInput(format!("invalid signal mean photon number: {e}"))
            })?,
            poisson_decoy,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Per-photon per-detector click probabilities for one (label, basis).
    pub fn photon_click_probs(&self, label: MubLabel, bob: MubBasis) -> [f64; 4] {
        let li = (if label.basis == MubBasis::M1 { 0 } else { 4 }) + (label.index - 1) as usize;
        let bi = if bob == MubBasis::M1 { 0 } else { 1 };
        self.click_p[li][bi]
    }
}

/// Draws one pulse: intensity class, uniform state label, uniform Bob basis,
/// Poisson photon number, per-detector signal clicks (each photon treated as
/// an independent detection trial), independent dark clicks, double-click
/// squashing, sifting and error resolution.
pub fn sample_pulse<R: Rng>(model: &ChannelModel, index: u64, rng: &mut R) -> PulseRecord {
    let cfg = &model.config;
    let u: f64 = rng.random();
    let class = if u < cfg.intensity_probs.signal {
        IntensityClass::Signal
    } else if u < cfg.intensity_probs.signal + cfg.intensity_probs.decoy {
        IntensityClass::Decoy
    } else {
        IntensityClass::Vacuum
    };
    let label_raw: u8 = rng.random_range(0..8);
    let alice = MubLabel {
        basis: if label_raw < 4 {
            MubBasis::M1
        } else {
            MubBasis::M2
        },
        index: label_raw % 4 + 1,
    };
    let bob_basis = if rng.random_range(0..2u8) == 0 {
        MubBasis::M1
    } else {
        MubBasis::M2
    };
    let photons: u32 = match class {
        IntensityClass::Signal => model.poisson_signal.sample(rng) as u32,
        IntensityClass::Decoy => model
            .poisson_decoy
            .map(|p| p.sample(rng) as u32)
            .unwrap_or(0),
        IntensityClass::Vacuum => 0,
    };

    let mut clicks: u8 = 0;
    if photons >= 1 {
        let p = model.photon_click_probs(alice, bob_basis);
        for (d, pd) in p.iter().enumerate() {
            let click_prob = 1.0 - (1.0 - pd).powi(photons as i32);
            if rng.random::<f64>() < click_prob {
                clicks |= 1 << d;
            }
        }
    }
    for d in 0..4 {
        if rng.random::<f64>() < model.dark {
            clicks |= 1 << d;
        }
    }

    let n_clicked = clicks.count_ones();
    let double_click = n_clicked > 1;
    let resolved = match n_clicked {
        0 => None,
        1 => Some(DetectorId::from_index(clicks.trailing_zeros() as usize)),
        k => {
            // squash: uniformly random detector among the clicked set
            let pick = rng.random_range(0..k);
            let mut seen = 0;
            let mut chosen = 0;
            for d in 0..4 {
                if clicks >> d & 1 == 1 {
                    if seen == pick {
                        chosen = d;
                        break;
                    }
                    seen += 1;
                }
            }
            Some(DetectorId::from_index(chosen))
        }
    };

    let sifted = resolved.is_some() && alice.basis == bob_basis;
    let error = sifted && resolved != Some(expected_detector(alice.index));
    PulseRecord {
        index,
        class,
        alice,
        bob_basis,
        photons,
        clicks,
        resolved,
        double_click,
        sifted,
        error,
    }
}

/// Output of one session: merged tallies and, on request, the pulse records.
#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub tally: TallyTable,
    pub records: Option<Vec<PulseRecord>>,
}

fn run_chunk(
    model: &ChannelModel,
    chunk: u64,
    keep_records: bool,
) -> (TallyTable, Option<Vec<PulseRecord>>) {
    let first = chunk * CHUNK_PULSES;
    let count = CHUNK_PULSES.min(model.config.pulses - first);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    rng.set_stream(chunk);
    let mut tally = TallyTable::default();
    let mut records = keep_records.then(|| Vec::with_capacity(count as usize));
    for i in 0..count {
        let record = sample_pulse(model, first + i, &mut rng);
        tally.record(&record);
        if let Some(v) = records.as_mut() {
            v.push(record);
        }
    }
    (tally, records)
}

/// Runs a full session.  `parallelism` caps the worker threads; the result is
/// bit-identical for every value because randomness is tied to fixed chunks
/// and tallies are merged in chunk order.
pub fn run_session(
    config: &SessionConfig,
    charge: QPlateCharge,
    truncation: OamTruncation,
    parallelism: Option<usize>,
    keep_records: bool,
) -> Result<SessionOutput> {
    let model = ChannelModel::new(config, charge, truncation)?;
    let n_chunks = config.pulses.div_ceil(CHUNK_PULSES);
    let threads = parallelism
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| QkdError::InvalidInput(format!("thread pool: {e}")))?;
    let chunk_outputs: Vec<(TallyTable, Option<Vec<PulseRecord>>)> = pool.install(|| {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| run_chunk(&model, c, keep_records))
            .collect()
    });
    let mut tally = TallyTable::default();
    let mut records = keep_records.then(Vec::new);
    for (t, r) in chunk_outputs {
        tally.absorb(&t);
        if let (Some(all), Some(chunk)) = (records.as_mut(), r) {
            all.extend(chunk);
        }
    }
    Ok(SessionOutput { tally, records })
}

/// CSV of the sifted subset of a record stream (one row per sifted record).
pub fn sifted_records_csv(records: &[PulseRecord]) -> String {
    let mut out = String::from(
        "pulse_index,class,alice_basis,alice_index,bob_basis,detector,double_click,error\n",
    );
    for r in records.iter().filter(|r| r.sifted) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.index,
            r.class.name(),
            r.alice.basis.name(),
            r.alice.index,
            r.bob_basis.name(),
            r.resolved.map(|d| d.name()).unwrap_or(""),
            r.double_click,
            r.error
        ));
    }
    out
}
