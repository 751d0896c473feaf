//! Built-in reference operating point: the published proof-of-principle
//! experiment this toolkit models (Ti:sapphire pulsed source attenuated to
//! weak coherent level, vacuum+weak decoy intensities, four SPDs behind a
//! time-multiplexed state-mapping receiver).
//!
//! The `--paper` CLI flag loads these numbers.

/// Mean photon number of the signal intensity class.
pub const MU: f64 = 0.053;
/// Mean photon number of the weak decoy class.
pub const NU: f64 = 0.017;
/// Measured signal gain (detections per transmitted signal pulse).
pub const Q_MU: f64 = 4.03e-3;
/// Measured decoy gain.
pub const Q_NU: f64 = 1.33e-3;
/// Measured signal QBER.
pub const E_MU: f64 = 0.006;
/// Measured decoy QBER.
pub const E_NU: f64 = 0.0065;
/// Vacuum yield used in the decoy-state inequalities.
pub const Y0: f64 = 8e-8;
/// Vacuum error rate convention.
pub const E0: f64 = 0.5;
/// One-sigma standard error of the signal QBER (quoted 3-sigma: 0.06%).
pub const SE_E_MU: f64 = 0.0006 / 3.0;
/// One-sigma standard error of the decoy QBER (quoted 3-sigma: 0.10%).
pub const SE_E_NU: f64 = 0.0010 / 3.0;
/// Protocol dimension.
pub const DIMENSION: u32 = 4;
/// Basis-sifting factor for symmetric basis choice.
pub const SIFTING_FACTOR: f64 = 0.5;

/// Per-detector dark count rate.
pub const DARK_RATE_HZ: f64 = 67.0;
/// Post-selection detection window.
pub const WINDOW_NS: f64 = 1.15;
/// Detector timing jitter, full width at half maximum.
pub const JITTER_FWHM_PS: f64 = 350.0;
/// Long-path delay multiplexing the two receiver paths onto shared SPDs.
pub const PATH_DELAY_NS: f64 = 3.05;
/// Mean matched-basis QBER target for the misalignment calibration.
pub const TARGET_QBER: f64 = 0.006;
/// Default q-plate charge (OAM shift of one quantum).
pub const QPLATE_CHARGE: f64 = 0.5;

/// Intensity class mix used by the simulated sessions (signal, decoy, vacuum).
pub const INTENSITY_PROBS: (f64, f64, f64) = (0.5, 0.25, 0.25);
