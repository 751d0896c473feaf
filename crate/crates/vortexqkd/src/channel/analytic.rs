//! Closed-form per-pulse expectations of the Monte Carlo channel model,
//! obtained by exact enumeration over state label, basis choice, Poisson
//! photon number and detector click subsets.  These are the calibration
//! targets and the independent route the sampled tallies are validated
//! against.

use crate::elements::QPlateCharge;
use crate::error::Result;
use crate::protocol::{click_distribution, measurement_effects, mub_state, MubBasis, MubLabel};
use crate::state::OamTruncation;

use super::{effective_dark_rate, window_acceptance, IntensityClass, SessionConfig};

/// Raw Born click probabilities (including the intrinsic 1/2 filtering loss)
/// for every (prepared label, measurement basis, detector) triple under a
/// polarization misalignment.
pub fn born_click_table(
    misalignment: f64,
    charge: QPlateCharge,
    truncation: OamTruncation,
) -> Result<[[[f64; 4]; 2]; 8]> {
    let rot = crate::elements::pol_rotation(misalignment, truncation);
    let sets = [
        measurement_effects(MubBasis::M1, charge, truncation)?,
        measurement_effects(MubBasis::M2, charge, truncation)?,
    ];
    let mut table = [[[0.0; 4]; 2]; 8];
    for (li, label) in MubLabel::all().into_iter().enumerate() {
        let s = rot.apply(&mub_state(label, charge, truncation)?)?;
        for (bi, set) in sets.iter().enumerate() {
            table[li][bi] = click_distribution(&s, set)?.detectors;
        }
    }
    Ok(table)
}

/// Exact per-pulse expectations for one intensity class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassExpectation {
    /// P(at least one detector resolves), any bases.
    pub detected: f64,
    /// P(detected and bases matched).
    pub sifted: f64,
    /// P(sifted and the squashed outcome is a wrong detector).
    pub errors: f64,
    pub detected_single: f64,
    pub sifted_single: f64,
    pub errors_single: f64,
}

impl ClassExpectation {
    /// Expected gain Q (detections per sent pulse).
    pub fn gain(&self) -> f64 {
        self.detected
    }

    /// Expected QBER of the sifted events.
    pub fn qber(&self) -> f64 {
        self.errors / self.sifted
    }
}

/// Expectations of all three classes of a session config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionExpectation {
    pub signal: ClassExpectation,
    pub decoy: ClassExpectation,
    pub vacuum: ClassExpectation,
}

impl SessionExpectation {
    pub fn class(&self, class: IntensityClass) -> &ClassExpectation {
        match class {
            IntensityClass::Signal => &self.signal,
            IntensityClass::Decoy => &self.decoy,
            IntensityClass::Vacuum => &self.vacuum,
        }
    }
}

/// Poisson pmf terms until the tail drops below 1e-16 (capped at 200 terms).
fn poisson_pmf(mean: f64) -> Vec<f64> {
    if mean == 0.0 {
        return vec![1.0];
    }
    let mut terms = Vec::with_capacity(32);
    let mut term = (-mean).exp();
    let mut cum = 0.0;
    let mut n = 0usize;
    while cum < 1.0 - 1e-16 && n < 200 {
        terms.push(term);
        cum += term;
        n += 1;
        term *= mean / n as f64;
    }
    terms
}

fn class_expectation_from_table(
    table: &[[[f64; 4]; 2]; 8],
    mean_photons: f64,
    eta_wa: f64,
    dark: f64,
) -> ClassExpectation {
    let pmf = poisson_pmf(mean_photons);
    let mut out = ClassExpectation {
        detected: 0.0,
        sifted: 0.0,
        errors: 0.0,
        detected_single: 0.0,
        sifted_single: 0.0,
        errors_single: 0.0,
    };
    for (li, per_label) in table.iter().enumerate() {
        let alice_basis = li / 4;
        let alice_det = li % 4;
        for (bi, born) in per_label.iter().enumerate() {
            let w_lb = 1.0 / 16.0; // uniform label x uniform bob basis
            let matched = bi == alice_basis;
            let p: [f64; 4] = [
                born[0] * eta_wa,
                born[1] * eta_wa,
                born[2] * eta_wa,
                born[3] * eta_wa,
            ];
            for (n, wn) in pmf.iter().enumerate() {
                if *wn < 1e-18 {
                    continue;
                }
                let mut c = [0.0; 4];
                for (cd, pd) in c.iter_mut().zip(p.iter()) {
                    let s = 1.0 - (1.0 - pd).powi(n as i32);
                    *cd = 1.0 - (1.0 - s) * (1.0 - dark);
                }
                // enumerate the 16 click subsets (detectors independent)
                let mut p_any = 0.0;
                let mut p_err = 0.0;
                for mask in 1u8..16 {
                    let mut pm = 1.0;
                    let mut wrong = 0u32;
                    for (d, cd) in c.iter().enumerate() {
                        if mask >> d & 1 == 1 {
                            pm *= cd;
                            if d != alice_det {
                                wrong += 1;
                            }
                        } else {
                            pm *= 1.0 - cd;
                        }
                    }
                    p_any += pm;
                    if matched {
                        p_err += pm * wrong as f64 / mask.count_ones() as f64;
                    }
                }
                let w = w_lb * wn;
                out.detected += w * p_any;
                if matched {
                    out.sifted += w * p_any;
                    out.errors += w * p_err;
                }
                if n == 1 {
                    out.detected_single += w * p_any;
                    if matched {
                        out.sifted_single += w * p_any;
                        out.errors_single += w * p_err;
                    }
                }
            }
        }
    }
    out
}

/// Exact expectations of a session config (one shared Born table, one pass
/// per intensity class).
pub fn session_expectation(
    config: &SessionConfig,
    charge: QPlateCharge,
    truncation: OamTruncation,
) -> Result<SessionExpectation> {
    let table = born_click_table(config.misalignment_delta_rad, charge, truncation)?;
    let eta_wa = config.eta * window_acceptance(config.jitter_fwhm_ps, config.window_ns);
    let dark = effective_dark_rate(config.dark_rate_hz, config.window_ns)?;
    Ok(SessionExpectation {
        signal: class_expectation_from_table(&table, config.mu, eta_wa, dark),
        decoy: class_expectation_from_table(&table, config.nu, eta_wa, dark),
        vacuum: class_expectation_from_table(&table, 0.0, eta_wa, dark),
    })
}

/// Solves for the transmittance `eta` whose expected signal gain equals
/// `target_gain` (bisection on the monotone exact expectation).
pub fn calibrate_eta(
    config: &SessionConfig,
    charge: QPlateCharge,
    truncation: OamTruncation,
    target_gain: f64,
) -> Result<f64> {
    let table = born_click_table(config.misalignment_delta_rad, charge, truncation)?;
    let wa = window_acceptance(config.jitter_fwhm_ps, config.window_ns);
    let dark = effective_dark_rate(config.dark_rate_hz, config.window_ns)?;
    let gain_at =
        |eta: f64| class_expectation_from_table(&table, config.mu, eta * wa, dark).detected;
    if target_gain > gain_at(1.0) {
        return Err(crate::error::QkdError::InvalidInput(format!(
            "target gain {target_gain} unreachable even at eta = 1"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if gain_at(mid) < target_gain {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
