//! Vacuum+weak decoy-state single-photon bounds and the d-dimensional GLLP
//! secret-key rate, evaluated from simulated tallies or user-supplied
//! observables.
//!
//! With gains Q and QBERs e of the signal (mu) and weak decoy (nu) classes
//! and the vacuum yield Y0, the single-photon contribution is bounded by
//!
//! ```text
//!   Delta1 >= mu^2 e^-mu / (mu nu - nu^2)
//!             * (Q_nu/Q_mu e^nu - nu^2/mu^2 e^mu - (mu^2-nu^2)/mu^2 Y0/Q_mu)
//!   Y1^L    = mu / (mu nu - nu^2)
//!             * (Q_nu e^nu - nu^2/mu^2 Q_mu e^mu - (mu^2-nu^2)/mu^2 Y0)
//!   e1     <= (e_nu Q_nu e^nu - e0 Y0) / (Y1^L nu)
//! ```
//!
//! and the key rate per pulse is
//! `R >= q_m Q_mu { -f_EC H_d(e_mu) + Delta1 [log2 d - H_d(e1)] }`, with
//! `H_d(e) = -(1-e) log2(1-e) - e log2(e/(d-1))`.  Statistical fluctuations
//! can push the brackets out of their physical ranges; values are clamped
//! and flagged rather than rejected so the bounds stay sound.

use serde::{Deserialize, Serialize};

use crate::channel::{SessionConfig, TallyTable};
use crate::error::{QkdError, Result};
use crate::presets;

/// Standard errors attached to the measured observables; zero means unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservableStdErrors {
    pub q_mu: f64,
    pub q_nu: f64,
    pub e_mu: f64,
    pub e_nu: f64,
    pub y0: f64,
}

/// Inputs of the decoy-state analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub mu: f64,
    pub nu: f64,
    pub q_mu: f64,
    pub q_nu: f64,
    pub e_mu: f64,
    pub e_nu: f64,
    pub y0: f64,
    pub e0: f64,
    pub dimension: u32,
    pub sifting_factor: f64,
    pub error_correction_efficiency: f64,
    #[serde(default)]
    pub std_errors: Option<ObservableStdErrors>,
}

impl Observables {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.mu > self.nu) {
            return Err(QkdError::InvalidInput(format!(
                "need 0 < nu < mu, got mu = {}, nu = {}",
                self.mu, self.nu
            )));
        }
        for (name, q) in [("Q_mu", self.q_mu), ("Q_nu", self.q_nu)] {
            if !(q > 0.0 && q < 1.0) {
                return Err(QkdError::InvalidInput(format!(
                    "{name} must lie in (0, 1), got {q}"
                )));
            }
        }
        if self.dimension < 2 {
            return Err(QkdError::InvalidInput(format!(
                "dimension must be >= 2, got {}",
                self.dimension
            )));
        }
        let e_max = (self.dimension - 1) as f64 / self.dimension as f64;
        for (name, e) in [("e_mu", self.e_mu), ("e_nu", self.e_nu), ("e0", self.e0)] {
            if !(0.0..=e_max).contains(&e) {
                return Err(QkdError::InvalidInput(format!(
                    "{name} must lie in [0, {e_max}], got {e}"
                )));
            }
        }
        if self.y0 < 0.0 {
            return Err(QkdError::InvalidInput(format!(
                "Y0 must be >= 0, got {}",
                self.y0
            )));
        }
        if !(self.sifting_factor > 0.0 && self.sifting_factor <= 1.0) {
            return Err(QkdError::InvalidInput(format!(
                "sifting factor must lie in (0, 1], got {}",
                self.sifting_factor
            )));
        }
        if self.error_correction_efficiency < 1.0 {
            return Err(QkdError::InvalidInput(format!(
                "error correction efficiency must be >= 1, got {}",
                self.error_correction_efficiency
            )));
        }
        Ok(())
    }

    /// The reference experiment's published observables.
    pub fn paper_preset(f_ec: f64) -> Observables {
        Observables {
            mu: presets::MU,
            nu: presets::NU,
            q_mu: presets::Q_MU,
            q_nu: presets::Q_NU,
            e_mu: presets::E_MU,
            e_nu: presets::E_NU,
            y0: presets::Y0,
            e0: presets::E0,
            dimension: presets::DIMENSION,
            sifting_factor: presets::SIFTING_FACTOR,
            error_correction_efficiency: f_ec,
            std_errors: Some(ObservableStdErrors {
                e_mu: presets::SE_E_MU,
                e_nu: presets::SE_E_NU,
                ..Default::default()
            }),
        }
    }
}

/// d-dimensional Shannon entropy `H_d(e)` in bits.
///
/// Continuous on [0, (d-1)/d], zero at e = 0 (the 0 log 0 limit) and maximal
/// (log2 d) at the uniform-error point e = (d-1)/d.
pub fn entropy_d(e: f64, d: u32) -> Result<f64> {
    if d < 2 {
        return Err(QkdError::InvalidInput(format!(
            "entropy dimension must be >= 2, got {d}"
        )));
    }
    let e_max = (d - 1) as f64 / d as f64;
    if !(-1e-12..=e_max + 1e-12).contains(&e) {
        return Err(QkdError::InvalidInput(format!(
            "error rate {e} outside [0, {e_max}]"
        )));
    }
    let e = e.clamp(0.0, e_max);
    if e == 0.0 {
        return Ok(0.0);
    }
    Ok(-(1.0 - e) * (1.0 - e).log2() - e * (e / (d as f64 - 1.0)).log2())
}

/// A bound value together with whether clamping to its physical range fired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: f64,
    pub clamped: bool,
}

fn clamp_unit(raw: f64) -> BoundValue {
    BoundValue {
        value: raw.clamp(0.0, 1.0),
        clamped: !(0.0..=1.0).contains(&raw),
    }
}

/// Lower bound on the single-photon fraction of detected signal pulses.
pub fn delta1_lower(obs: &Observables) -> Result<BoundValue> {
    obs.validate()?;
    let (mu, nu) = (obs.mu, obs.nu);
    let pre = mu * mu * (-mu).exp() / (mu * nu - nu * nu);
    let bracket = obs.q_nu / obs.q_mu * nu.exp()
        - nu * nu / (mu * mu) * mu.exp()
        - (mu * mu - nu * nu) / (mu * mu) * obs.y0 / obs.q_mu;
    Ok(clamp_unit(pre * bracket))
}

/// Lower bound on the single-photon yield Y1.
pub fn y1_lower(obs: &Observables) -> Result<BoundValue> {
    obs.validate()?;
    let (mu, nu) = (obs.mu, obs.nu);
    let pre = mu / (mu * nu - nu * nu);
    let bracket = obs.q_nu * nu.exp()
        - nu * nu / (mu * mu) * obs.q_mu * mu.exp()
        - (mu * mu - nu * nu) / (mu * mu) * obs.y0;
    Ok(clamp_unit(pre * bracket))
}

/// Upper bound on the single-photon error rate, given a strictly positive
/// single-photon yield lower bound.
pub fn e1_upper(obs: &Observables, y1: f64) -> Result<BoundValue> {
    obs.validate()?;
    if y1 <= 0.0 {
        return Err(QkdError::UnboundedErrorRate);
    }
    let raw = (obs.e_nu * obs.q_nu * obs.nu.exp() - obs.e0 * obs.y0) / (y1 * obs.nu);
    let e_max = (obs.dimension - 1) as f64 / obs.dimension as f64;
    Ok(BoundValue {
        value: raw.clamp(0.0, e_max),
        clamped: !(0.0..=e_max).contains(&raw),
    })
}

/// The three decoy-state estimates with their clamp flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub delta1_lower: BoundValue,
    pub y1_lower: BoundValue,
    pub e1_upper: BoundValue,
    /// Set when the Y1 bound collapsed to zero and e1 is unbounded; the key
    /// rate is zero in that case.
    pub e1_unbounded: bool,
}

/// Evaluates all three bounds.
pub fn decoy_bounds(obs: &Observables) -> Result<DecoyBounds> {
    let delta1 = delta1_lower(obs)?;
    let y1 = y1_lower(obs)?;
    let e_max = (obs.dimension - 1) as f64 / obs.dimension as f64;
    let (e1, e1_unbounded) = match e1_upper(obs, y1.value) {
        Ok(b) => (b, false),
        Err(QkdError::UnboundedErrorRate) => (
            BoundValue {
                value: e_max,
                clamped: true,
            },
            true,
        ),
        Err(e) => return Err(e),
    };
    Ok(DecoyBounds {
        delta1_lower: delta1,
        y1_lower: y1,
        e1_upper: e1,
        e1_unbounded,
    })
}

/// Additive pieces of the rate, in bits per sifted signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateComponents {
    /// `-f_EC H_d(e_mu)`: error-correction leakage.
    pub error_correction: f64,
    /// `Delta1 (log2 d - H_d(e1))`: single-photon privacy yield.
    pub privacy: f64,
}

/// First-order propagated uncertainties (central finite differences against
/// the inputs carrying standard errors).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateUncertainty {
    pub se_skrpss: f64,
    pub se_rate: f64,
    pub three_sigma_skrpss: f64,
}

/// Full key-rate evaluation with input echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub observables: Observables,
    pub bounds: DecoyBounds,
    /// `H_d(e_mu)` in bits.
    pub entropy_signal: f64,
    /// `H_d(e1)` in bits.
    pub entropy_single: f64,
    pub components: RateComponents,
    /// Secret bits per transmitted pulse (clamped at zero).
    pub secret_key_rate: f64,
    /// Secret bits per sifted signal, `R / (q_m Q_mu)` (clamped at zero).
    pub skrpss: f64,
    pub rate_clamped: bool,
    pub uncertainty: Option<RateUncertainty>,
}

fn evaluate(obs: &Observables) -> Result<(DecoyBounds, f64, f64, RateComponents, f64, f64, bool)> {
    let bounds = decoy_bounds(obs)?;
    let d = obs.dimension;
    let h_signal = entropy_d(obs.e_mu, d)?;
    let h_single = entropy_d(bounds.e1_upper.value, d)?;
    let components = RateComponents {
        error_correction: -obs.error_correction_efficiency * h_signal,
        privacy: bounds.delta1_lower.value * ((d as f64).log2() - h_single),
    };
    let skrpss_raw = components.error_correction + components.privacy;
    let rate_raw = obs.sifting_factor * obs.q_mu * skrpss_raw;
    let clamped = skrpss_raw < 0.0 || bounds.e1_unbounded;
    let skrpss = if clamped { 0.0 } else { skrpss_raw };
    let rate = if clamped { 0.0 } else { rate_raw };
    Ok((
        bounds, h_signal, h_single, components, skrpss, rate, clamped,
    ))
}

/// Computes the decoy bounds and the GLLP rate for a set of observables.
pub fn key_rate(obs: &Observables) -> Result<KeyRateReport> {
    let (bounds, h_signal, h_single, components, skrpss, rate, clamped) = evaluate(obs)?;
    let uncertainty = match obs.std_errors {
        Some(se) => Some(propagate_uncertainty(obs, &se)?),
        None => None,
    };
    Ok(KeyRateReport {
        observables: *obs,
        bounds,
        entropy_signal: h_signal,
        entropy_single: h_single,
        components,
        secret_key_rate: rate,
        skrpss,
        rate_clamped: clamped,
        uncertainty,
    })
}

fn propagate_uncertainty(obs: &Observables, se: &ObservableStdErrors) -> Result<RateUncertainty> {
    // central differences with a 1e-6 relative step on every input that
    // carries a nonzero standard error
    let mut var_skrpss = 0.0;
    let mut var_rate = 0.0;
    type Field = (fn(&mut Observables) -> &mut f64, f64);
    let fields: [Field; 5] = [
        (|o| &mut o.q_mu, se.q_mu),
        (|o| &mut o.q_nu, se.q_nu),
        (|o| &mut o.e_mu, se.e_mu),
        (|o| &mut o.e_nu, se.e_nu),
        (|o| &mut o.y0, se.y0),
    ];
    for (access, sigma) in fields {
        if sigma <= 0.0 {
            continue;
        }
        let x = *access(&mut obs.clone());
        let h = if x != 0.0 { 1e-6 * x.abs() } else { 1e-12 };
        let mut plus = *obs;
        *access(&mut plus) += h;
        let mut minus = *obs;
        *access(&mut minus) -= h;
        let (.., s_plus, r_plus, _) = evaluate(&plus)?;
        let (.., s_minus, r_minus, _) = evaluate(&minus)?;
        let g_s = (s_plus - s_minus) / (2.0 * h);
        let g_r = (r_plus - r_minus) / (2.0 * h);
        var_skrpss += (g_s * sigma).powi(2);
        var_rate += (g_r * sigma).powi(2);
    }
    let se_skrpss = var_skrpss.sqrt();
    Ok(RateUncertainty {
        se_skrpss,
        se_rate: var_rate.sqrt(),
        three_sigma_skrpss: 3.0 * se_skrpss,
    })
}

/// Maps a simulated tally into analysis observables.
///
/// The vacuum yield is the vacuum-class gain (four-detector union of dark
/// counts); `e0 = 0.5` is kept as the analysis convention even though the
/// squashed vacuum outcome is uniform over four detectors, which only makes
/// the e1 bound more conservative.
pub fn observables_from_tally(
    tally: &TallyTable,
    config: &SessionConfig,
    f_ec: f64,
) -> Result<Observables> {
    for (name, class) in [("signal", &tally.signal), ("decoy", &tally.decoy)] {
        if class.sent == 0 || class.detected == 0 {
            return Err(QkdError::EmptyClass(format!("{name}: no detections")));
        }
        if class.sifted == 0 {
            return Err(QkdError::EmptyClass(format!("{name}: no sifted events")));
        }
    }
    if tally.vacuum.sent == 0 {
        return Err(QkdError::EmptyClass("vacuum: no pulses sent".into()));
    }
    let obs = Observables {
        mu: config.mu,
        nu: config.nu,
        q_mu: tally.signal.gain(),
        q_nu: tally.decoy.gain(),
        e_mu: tally.signal.qber(),
        e_nu: tally.decoy.qber(),
        y0: tally.vacuum.gain(),
        e0: 0.5,
        dimension: 4,
        sifting_factor: 0.5,
        error_correction_efficiency: f_ec,
        std_errors: Some(ObservableStdErrors {
            q_mu: tally.signal.se_gain(),
            q_nu: tally.decoy.se_gain(),
            e_mu: tally.signal.se_qber(),
            e_nu: tally.decoy.se_qber(),
            y0: if tally.vacuum.detected > 0 {
                tally.vacuum.se_gain()
            } else {
                0.0
            },
        }),
    };
    obs.validate()?;
    Ok(obs)
}
