//! Command implementations behind the `vortexqkd` binary: config ingestion,
//! MUB verification, crosstalk export, Monte Carlo sessions, key-rate
//! evaluation and the two-path arrival-time profile.
//!
//! Every command is deterministic given its config (seed included); repeated
//! invocations write byte-identical primary outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{
    self, analytic, window_acceptance, IntensityProbs, SessionConfig, TallyReport,
};
use crate::elements::QPlateCharge;
use crate::error::{QkdError, Result};
use crate::presets;
use crate::protocol::{
    calibrate_misalignment, crosstalk_matrix, mub_state, prepare_pipeline, MubLabel, PrepAngles,
};
use crate::security::{key_rate, observables_from_tally, KeyRateReport, Observables};
use crate::state::OamTruncation;

/// Top-level run configuration: channel/session parameters plus the optics
/// (q-plate charge, OAM truncation) and the misalignment calibration target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub qplate_charge: f64,
    pub oam_l_max: u32,
    pub target_qber: f64,
    pub session: SessionConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(QkdError::InvalidInput(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        let charge = self.charge()?;
        if self.oam_l_max < 2 * charge.oam_shift().unsigned_abs() {
            return Err(QkdError::InvalidInput(format!(
                "oam_l_max {} too small for 2q = {} (needs >= 4q)",
                self.oam_l_max,
                charge.oam_shift()
            )));
        }
        if !(0.0..=0.3).contains(&self.target_qber) {
            return Err(QkdError::InvalidInput(format!(
                "target_qber {} outside [0, 0.3]",
                self.target_qber
            )));
        }
        self.session.validate()
    }

    pub fn charge(&self) -> Result<QPlateCharge> {
        QPlateCharge::new(self.qplate_charge)
    }

    pub fn truncation(&self) -> OamTruncation {
        OamTruncation::new(self.oam_l_max)
    }

    /// The calibrated reference configuration behind `--paper`.
    pub fn paper_default(pulses: u64, seed: u64) -> Result<RunConfig> {
        let charge = QPlateCharge::new(presets::QPLATE_CHARGE)?;
        let truncation = charge.default_truncation();
        let session = SessionConfig::paper_calibrated(charge, truncation, pulses, seed)?;
        Ok(RunConfig {
            schema_version: 1,
            qplate_charge: presets::QPLATE_CHARGE,
            oam_l_max: truncation.l_max() as u32,
            target_qber: presets::TARGET_QBER,
            session,
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn write_output(out_dir: Option<&Path>, name: &str, contents: &str) -> Result<Option<PathBuf>> {
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(name);
            fs::write(&path, contents)?;
            Ok(Some(path))
        }
        None => Ok(None),
    }
}

/// One prepared state in the MUB report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MubStateReport {
    pub label: String,
    /// Flat (pol, l) amplitudes as (re, im) pairs.
    pub amplitudes: Vec<(f64, f64)>,
    pub pipeline_fidelity: f64,
}

/// Output of `vortexqkd mubs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MubReport {
    pub schema_version: u32,
    pub qplate_charge: f64,
    pub oam_l_max: u32,
    pub states: Vec<MubStateReport>,
    /// 8x8 squared-overlap Gram matrix, rows/cols psi1..psi4, phi1..phi4.
    pub gram_squared: Vec<Vec<f64>>,
    pub orthonormal_pass: bool,
    pub unbiased_pass: bool,
    pub pipeline_pass: bool,
    pub pass: bool,
}

/// Builds the eight MUB states, their Gram matrix of squared overlaps and the
/// pipeline-vs-table fidelities, and checks orthonormality and 1/4
/// unbiasedness to 1e-12.
///
/// `perturb_convention` is a test hook that swaps the circular-basis sign
/// convention in the comparison table, which must make the checks fail.
pub fn cmd_mubs(config: &RunConfig, perturb_convention: bool) -> Result<MubReport> {
    let charge = config.charge()?;
    let trunc = config.truncation();
    let tol = 1e-12;

    let mut states = Vec::with_capacity(8);
    let mut kets = Vec::with_capacity(8);
    for label in MubLabel::all() {
        let table = mub_state(label, charge, trunc)?;
        let reference = if perturb_convention {
            // conjugated OAM phase: the opposite circular-basis convention
            let conj = table.amplitudes().mapv(|z| z.conj());
            crate::state::HybridState::from_amplitudes(conj.to_vec(), trunc)?
        } else {
            table.clone()
        };
        let prepared = prepare_pipeline(PrepAngles::for_label(label), charge, trunc)?;
        let fidelity = prepared.fidelity(&reference)?;
        states.push(MubStateReport {
            label: label.name(),
            amplitudes: table.amplitudes().iter().map(|z| (z.re, z.im)).collect(),
            pipeline_fidelity: fidelity,
        });
        kets.push(table);
    }

    let mut gram = vec![vec![0.0; 8]; 8];
    for a in 0..8 {
        for b in 0..8 {
            gram[a][b] = kets[a].fidelity(&kets[b])?;
        }
    }
    let mut orthonormal = true;
    let mut unbiased = true;
    for (a, row) in gram.iter().enumerate() {
        for (b, overlap) in row.iter().enumerate() {
            if a / 4 == b / 4 {
                let want = if a == b { 1.0 } else { 0.0 };
                orthonormal &= (overlap - want).abs() < tol;
            } else {
                unbiased &= (overlap - 0.25).abs() < tol;
            }
        }
    }
    let pipeline = states.iter().all(|s| s.pipeline_fidelity > 1.0 - tol);
    Ok(MubReport {
        schema_version: 1,
        qplate_charge: config.qplate_charge,
        oam_l_max: config.oam_l_max,
        states,
        gram_squared: gram,
        orthonormal_pass: orthonormal,
        unbiased_pass: unbiased,
        pipeline_pass: pipeline,
        pass: orthonormal && unbiased && pipeline,
    })
}

/// Summary of `vortexqkd crosstalk`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrosstalkSummary {
    pub schema_version: u32,
    pub misalignment_rad: f64,
    pub calibrated: bool,
    pub target_qber: f64,
    pub efficiencies: Vec<(String, f64)>,
    pub mean_efficiency: f64,
    /// QBER-equivalent of the crosstalk: 1 - mean efficiency.
    pub qber_equivalent: f64,
    pub min_diagonal: f64,
    pub csv_path: Option<PathBuf>,
}

/// Misalignment input accepted by the crosstalk command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MisalignmentArg {
    /// Calibrate against the config's target QBER.
    Calibrate,
    Radians(f64),
    /// HWP fast-axis error in degrees; a HWP at theta realizes the
    /// reflection at 2*theta, so the rotation angle is 2*theta.
    HwpDegrees(f64),
}

/// Computes the crosstalk table, writes the CSV and summarizes per-state
/// projective efficiencies.
pub fn cmd_crosstalk(
    config: &RunConfig,
    arg: MisalignmentArg,
    out_dir: Option<&Path>,
) -> Result<CrosstalkSummary> {
    let charge = config.charge()?;
    let trunc = config.truncation();
    let (delta, calibrated) = match arg {
        MisalignmentArg::Calibrate => (
            calibrate_misalignment(config.target_qber, charge, trunc)?,
            true,
        ),
        MisalignmentArg::Radians(r) => (r, false),
        MisalignmentArg::HwpDegrees(deg) => (2.0 * deg.to_radians(), false),
    };
    let xt = crosstalk_matrix(delta, charge, trunc)?;
    let csv_path = write_output(out_dir, "crosstalk.csv", &xt.to_csv())?;
    let effs = xt.efficiencies();
    let labels = MubLabel::all();
    let mean_eff = effs.iter().sum::<f64>() / effs.len() as f64;
    let min_diag = effs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(CrosstalkSummary {
        schema_version: 1,
        misalignment_rad: delta,
        calibrated,
        target_qber: config.target_qber,
        efficiencies: labels
            .iter()
            .zip(effs.iter())
            .map(|(l, e)| (l.name(), *e))
            .collect(),
        mean_efficiency: mean_eff,
        qber_equivalent: 1.0 - mean_eff,
        min_diagonal: min_diag,
        csv_path,
    })
}

/// Output of `vortexqkd simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateReport {
    pub tally: TallyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key_rate: Option<KeyRateReport>,
    pub records_path: Option<PathBuf>,
    pub tally_path: Option<PathBuf>,
}

/// Runs a Monte Carlo session and writes the tally JSON (and optionally the
/// sifted-record CSV and a key-rate report evaluated from the tallies).
pub fn cmd_simulate(
    config: &RunConfig,
    out_dir: Option<&Path>,
    parallelism: Option<usize>,
    keep_records: bool,
    with_key_rate: bool,
    f_ec: f64,
) -> Result<SimulateReport> {
    config.validate()?;
    let charge = config.charge()?;
    let trunc = config.truncation();
    let output = channel::run_session(&config.session, charge, trunc, parallelism, keep_records)?;
    let tally = TallyReport::from_tally(&output.tally, &config.session);
    let tally_json = serde_json::to_string_pretty(&tally)?;
    let tally_path = write_output(out_dir, "tally.json", &(tally_json + "\n"))?;

    let records_path = match output.records.as_deref() {
        Some(records) => write_output(
            out_dir,
            "records.csv",
            &channel::sifted_records_csv(records),
        )?,
        None => None,
    };

    let key_rate_report = if with_key_rate {
        let obs = observables_from_tally(&output.tally, &config.session, f_ec)?;
        let report = key_rate(&obs)?;
        let json = serde_json::to_string_pretty(&report)?;
        write_output(out_dir, "keyrate.json", &(json + "\n"))?;
        Some(report)
    } else {
        None
    };

    Ok(SimulateReport {
        tally,
        key_rate: key_rate_report,
        records_path,
        tally_path,
    })
}

/// Source of observables for `vortexqkd keyrate`.
pub enum ObservablesSource<'a> {
    Paper,
    File(&'a Path),
}

/// Evaluates the decoy bounds and GLLP rate for observables from the
/// reference preset or a JSON file.
pub fn cmd_keyrate(
    source: ObservablesSource<'_>,
    f_ec: f64,
    out_dir: Option<&Path>,
) -> Result<KeyRateReport> {
    let obs = match source {
        ObservablesSource::Paper => Observables::paper_preset(f_ec),
        ObservablesSource::File(path) => {
            let text = fs::read_to_string(path)?;
            let mut obs: Observables = serde_json::from_str(&text)?;
            obs.error_correction_efficiency = f_ec;
            obs.validate()?;
            obs
        }
    };
    let report = key_rate(&obs)?;
    let json = serde_json::to_string_pretty(&report)?;
    write_output(out_dir, "keyrate.json", &(json + "\n"))?;
    Ok(report)
}

/// Summary of `vortexqkd timing`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingSummary {
    pub schema_version: u32,
    pub peak_times_ns: [f64; 2],
    pub separation_ns: f64,
    pub fwhm_ns: f64,
    pub window_ns: f64,
    /// [start, stop] of the post-selection window around each peak.
    pub window_edges_ns: [[f64; 2]; 2],
    pub window_acceptance: f64,
    pub csv_path: Option<PathBuf>,
}

/// Emits the analytic two-peak arrival-time profile of the time-multiplexed
/// receiver paths: two Gaussians separated by the long-path delay, each with
/// the detector-jitter FWHM, plus the post-selection window annotation.
pub fn cmd_timing(config: &RunConfig, out_dir: Option<&Path>) -> Result<TimingSummary> {
    let s = &config.session;
    let sigma_ns = s.jitter_fwhm_ps * 1e-3 / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let peaks = [0.0, s.path_delay_ns];
    let t_lo = peaks[0] - 1.0;
    let t_hi = peaks[1] + 1.0;
    let step = 0.005;
    let mut csv = String::from("time_ns,relative_rate\n");
    let n = ((t_hi - t_lo) / step).round() as usize;
    for k in 0..=n {
        let t = t_lo + k as f64 * step;
        let rate: f64 = peaks
            .iter()
            .map(|p| (-((t - p) * (t - p)) / (2.0 * sigma_ns * sigma_ns)).exp())
            .sum();
        csv.push_str(&format!("{t},{rate}\n"));
    }
    let csv_path = write_output(out_dir, "timing.csv", &csv)?;
    Ok(TimingSummary {
        schema_version: 1,
        peak_times_ns: peaks,
        separation_ns: s.path_delay_ns,
        fwhm_ns: s.jitter_fwhm_ps * 1e-3,
        window_ns: s.window_ns,
        window_edges_ns: peaks.map(|p| [p - 0.5 * s.window_ns, p + 0.5 * s.window_ns]),
        window_acceptance: window_acceptance(s.jitter_fwhm_ps, s.window_ns),
        csv_path,
    })
}

/// Expected analytic observables of a config; handy for sizing sessions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpectationSummary {
    pub q_signal: f64,
    pub q_decoy: f64,
    pub q_vacuum: f64,
    pub e_signal: f64,
    pub e_decoy: f64,
}

pub fn expectation_summary(config: &RunConfig) -> Result<ExpectationSummary> {
    let exp =
        analytic::session_expectation(&config.session, config.charge()?, config.truncation())?;
    Ok(ExpectationSummary {
        q_signal: exp.signal.gain(),
        q_decoy: exp.decoy.gain(),
        q_vacuum: exp.vacuum.gain(),
        e_signal: exp.signal.qber(),
        e_decoy: exp.decoy.qber(),
    })
}

/// Builds a default config for commands that run without `--config`.
pub fn default_config() -> Result<RunConfig> {
    // pure-optics commands never sample the channel, so a nominal session is
    // enough; the calibrated paper preset is only built on demand
    Ok(RunConfig {
        schema_version: 1,
        qplate_charge: presets::QPLATE_CHARGE,
        oam_l_max: 4,
        target_qber: presets::TARGET_QBER,
        session: SessionConfig {
            mu: presets::MU,
            nu: presets::NU,
            intensity_probs: IntensityProbs {
                signal: presets::INTENSITY_PROBS.0,
                decoy: presets::INTENSITY_PROBS.1,
                vacuum: presets::INTENSITY_PROBS.2,
            },
            eta: 0.15,
            dark_rate_hz: presets::DARK_RATE_HZ,
            window_ns: presets::WINDOW_NS,
            jitter_fwhm_ps: presets::JITTER_FWHM_PS,
            path_delay_ns: presets::PATH_DELAY_NS,
            misalignment_delta_rad: 0.0,
            pulses: 100_000,
            seed: 0,
        },
    })
}
