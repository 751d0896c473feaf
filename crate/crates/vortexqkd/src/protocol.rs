//! MUB preparation pipeline and the q-plate state-mapping projective
//! measurement, yielding exact detector click distributions and crosstalk
//! matrices.
//!
//! The two mutually unbiased bases over the four-dimensional space spanned by
//! {H, V} (x) {+2q, -2q} are
//!
//! ```text
//!   psi_1 = |H>(|2q> + |-2q>)   psi_2 = |H>(|2q> - |-2q>)
//!   psi_3 = |V>(|2q> - |-2q>)   psi_4 = |V>(|2q> + |-2q>)
//!   phi_1 = |D>(|2q> + i|-2q>)  phi_2 = |D>(|2q> - i|-2q>)
//!   phi_3 = |A>(|2q> - i|-2q>)  phi_4 = |A>(|2q> + i|-2q>)
//! ```
//!
//! (each divided by sqrt(2); |D/A> = (|H> +- |V>)/sqrt(2)).  Preparation is
//! polarization-only manipulation of the radial vortex Q|H>|0>; measurement
//! maps the OAM superposition back onto zero-OAM polarization with a second
//! q-plate per PBS arm and discriminates it with polarizers, at the cost of
//! an exact 50% single-mode-fiber filtering loss.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::elements::{
    pbs, pol_projector, pol_reflection, pol_rotation, qplate, smf_filter, QPlateCharge,
};
use crate::error::{QkdError, Result};
use crate::state::{HybridState, OamTruncation, OpticalElement, Polarization};

/// The two measurement/preparation bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MubBasis {
    M1,
    M2,
}

impl MubBasis {
    pub const BOTH: [MubBasis; 2] = [MubBasis::M1, MubBasis::M2];

    /// Basis-selection reflection angle: 0 for M1, pi/4 for M2.
    pub fn selection_angle(self) -> f64 {
        match self {
            MubBasis::M1 => 0.0,
            MubBasis::M2 => std::f64::consts::FRAC_PI_4,
        }
    }

    pub fn other(self) -> MubBasis {
        match self {
            MubBasis::M1 => MubBasis::M2,
            MubBasis::M2 => MubBasis::M1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MubBasis::M1 => "M1",
            MubBasis::M2 => "M2",
        }
    }
}

/// Protocol-level identifier of a prepared state: basis and index 1..4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MubLabel {
    pub basis: MubBasis,
    pub index: u8,
}

impl MubLabel {
    pub fn new(basis: MubBasis, index: u8) -> Result<Self> {
        if !(1..=4).contains(&index) {
            return Err(QkdError::InvalidInput(format!(
                "MUB index must be 1..4, got {index}"
            )));
        }
        Ok(MubLabel { basis, index })
    }

    /// All eight labels, psi_1..psi_4 then phi_1..phi_4.
    pub fn all() -> [MubLabel; 8] {
        let mut out = [MubLabel {
            basis: MubBasis::M1,
            index: 1,
        }; 8];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = MubLabel {
                basis: if k < 4 { MubBasis::M1 } else { MubBasis::M2 },
                index: (k % 4) as u8 + 1,
            };
        }
        out
    }

    pub fn name(&self) -> String {
        match self.basis {
            MubBasis::M1 => format!("psi{}", self.index),
            MubBasis::M2 => format!("phi{}", self.index),
        }
    }
}

/// The four single-photon detectors; indices 1..4 map to DH1, DV1, DH2, DV2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectorId {
    DH1,
    DV1,
    DH2,
    DV2,
}

impl DetectorId {
    pub const ALL: [DetectorId; 4] = [
        DetectorId::DH1,
        DetectorId::DV1,
        DetectorId::DH2,
        DetectorId::DV2,
    ];

    pub fn index(self) -> usize {
        match self {
            DetectorId::DH1 => 0,
            DetectorId::DV1 => 1,
            DetectorId::DH2 => 2,
            DetectorId::DV2 => 3,
        }
    }

    pub fn from_index(i: usize) -> DetectorId {
        DetectorId::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            DetectorId::DH1 => "DH1",
            DetectorId::DV1 => "DV1",
            DetectorId::DH2 => "DH2",
            DetectorId::DV2 => "DV2",
        }
    }
}

/// Detector that fires for MUB index `i` (1..4) in its matched basis.
pub fn expected_detector(index: u8) -> DetectorId {
    DetectorId::ALL[(index - 1) as usize]
}

/// Preparation angles (alpha1, delta_alpha = alpha2 - alpha1).
///
/// The prepared state carries linear polarization at angle `delta_alpha` and
/// an OAM relative phase e^{2i alpha1}; M1 uses angles from {0, pi/2} and M2
/// from {pi/4, -pi/4}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepAngles {
    pub alpha1: f64,
    pub delta_alpha: f64,
}

impl PrepAngles {
    pub fn alpha2(&self) -> f64 {
        self.alpha1 + self.delta_alpha
    }

    /// The (alpha1, delta_alpha) pair preparing a given MUB element.  The
    /// assignment was fixed by exhaustive fidelity matching of the four
    /// combinations per basis against the state table.
    pub fn for_label(label: MubLabel) -> PrepAngles {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        let (alpha1, delta_alpha) = match (label.basis, label.index) {
            (MubBasis::M1, 1) => (0.0, 0.0),
            (MubBasis::M1, 2) => (FRAC_PI_2, 0.0),
            (MubBasis::M1, 3) => (FRAC_PI_2, FRAC_PI_2),
            (MubBasis::M1, 4) => (0.0, FRAC_PI_2),
            (MubBasis::M2, 1) => (FRAC_PI_4, FRAC_PI_4),
            (MubBasis::M2, 2) => (-FRAC_PI_4, FRAC_PI_4),
            (MubBasis::M2, 3) => (-FRAC_PI_4, -FRAC_PI_4),
            (MubBasis::M2, 4) => (FRAC_PI_4, -FRAC_PI_4),
            _ => unreachable!("MubLabel index validated at construction"),
        };
        PrepAngles {
            alpha1,
            delta_alpha,
        }
    }

    /// Checks membership of both angles in the basis' allowed set.
    pub fn validate(&self, basis: MubBasis) -> Result<()> {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        let allowed: [f64; 2] = match basis {
            MubBasis::M1 => [0.0, FRAC_PI_2],
            MubBasis::M2 => [FRAC_PI_4, -FRAC_PI_4],
        };
        let ok = |x: f64| allowed.iter().any(|a| (x - a).abs() < 1e-12);
        if ok(self.alpha1) && ok(self.delta_alpha) {
            Ok(())
        } else {
            Err(QkdError::InvalidInput(format!(
                "angles ({}, {}) not in the {} set",
                self.alpha1,
                self.delta_alpha,
                basis.name()
            )))
        }
    }
}

/// Builds the normalized MUB ket for a label directly from the state table.
pub fn mub_state(
    label: MubLabel,
    charge: QPlateCharge,
    truncation: OamTruncation,
) -> Result<HybridState> {
    let shift = charge.oam_shift();
    if !truncation.contains(shift) {
        return Err(QkdError::BandViolation {
            l: shift,
            l_max: truncation.l_max() as u32,
        });
    }
    let i = (label.index - 1) as usize;
    // polarization amplitudes (H, V) and OAM phase on |-2q>
    let (pol, phase) = match label.basis {
        MubBasis::M1 => {
            let pols = [(1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.0, 1.0)];
            let phases = [
                Complex64::new(1.0, 0.0),
                Complex64::new(-1.0, 0.0),
                Complex64::new(-1.0, 0.0),
                Complex64::new(1.0, 0.0),
            ];
            (pols[i], phases[i])
        }
        MubBasis::M2 => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let pols = [(s, s), (s, s), (s, -s), (s, -s)];
            let phases = [
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, 1.0),
            ];
            (pols[i], phases[i])
        }
    };
    let s2 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut amps = vec![Complex64::new(0.0, 0.0); truncation.dim()];
    for (pamp, p) in [(pol.0, Polarization::H), (pol.1, Polarization::V)] {
        if pamp != 0.0 {
            let c = Complex64::new(pamp, 0.0) * s2;
            amps[truncation.flat(p, shift)] += c;
            amps[truncation.flat(p, -shift)] += c * phase;
        }
    }
    HybridState::from_amplitudes(amps, truncation)
}

/// Runs the polarization-only preparation chain on the radial vortex and
/// normalizes the surviving branch:
///
/// ```text
///   U(alpha2) . P(alpha1) . Q(q) |H>|0>,    alpha2 = alpha1 + delta_alpha
/// ```
///
/// with the projector realized through its reflection factorization
/// P(alpha1) = U(alpha1) P(0) U(alpha1).  The pre-normalization squared norm
/// is exactly 1/2 and the result matches `mub_state` up to a global phase.
pub fn prepare_pipeline(
    angles: PrepAngles,
    charge: QPlateCharge,
    truncation: OamTruncation,
) -> Result<HybridState> {
    let vortex = qplate(charge, truncation)?.apply(&HybridState::basis_ket(
        Polarization::H,
        0,
        truncation,
    )?)?;
    let projected = pol_reflection(angles.alpha1, truncation).apply(
        &pol_projector(0.0, truncation)
            .apply(&pol_reflection(angles.alpha1, truncation).apply(&vortex)?)?,
    )?;
    let out = pol_reflection(angles.alpha2(), truncation).apply(&projected)?;
    Ok(out.normalized()?.0)
}

/// Placement of the zero-OAM polarization analysis angle after the
/// measurement q-plates.  The default ties it to the basis-selection angle,
/// which is what makes the M2 chain discriminating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha4Policy {
    MatchAlpha3,
    Fixed(f64),
}

/// One detector's positive-semidefinite measurement effect.
#[derive(Debug, Clone)]
pub struct MeasurementEffect {
    pub detector: DetectorId,
    pub effect: OpticalElement,
}

/// The four detector effects of one basis plus the loss effect absorbing the
/// filtered non-zero-OAM terms; the five sum to the identity.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub basis: MubBasis,
    pub effects: Vec<MeasurementEffect>,
    pub loss: OpticalElement,
}

/// Builds the state-mapping measurement for a basis.
///
/// Per PBSa arm the chain is
/// `Pi_{H/V} . U(alpha4) . SMF . Q(q) . Pi_{H/V arm} . U(alpha3)`, with
/// alpha3 = 0 (M1) or pi/4 (M2); the H arm feeds DH1/DV1 and the V arm
/// DH2/DV2.  Effects are `chain^+ chain`, positive semidefinite by
/// construction.
pub fn measurement_effects(
    basis: MubBasis,
    charge: QPlateCharge,
    truncation: OamTruncation,
) -> Result<MeasurementSet> {
    measurement_effects_with_policy(basis, charge, truncation, Alpha4Policy::MatchAlpha3)
}

/// As [`measurement_effects`] with an explicit alpha4 placement.
pub fn measurement_effects_with_policy(
    basis: MubBasis,
    charge: QPlateCharge,
    truncation: OamTruncation,
    policy: Alpha4Policy,
) -> Result<MeasurementSet> {
    if truncation.l_max() < 2 * charge.oam_shift().abs() {
        return Err(QkdError::BandViolation {
            l: 2 * charge.oam_shift(),
            l_max: truncation.l_max() as u32,
        });
    }
    let alpha3 = basis.selection_angle();
    let alpha4 = match policy {
        Alpha4Policy::MatchAlpha3 => alpha3,
        Alpha4Policy::Fixed(a) => a,
    };
    let select = pol_reflection(alpha3, truncation);
    let analyze = pol_reflection(alpha4, truncation);
    let qp = qplate(charge, truncation)?;
    let filter = smf_filter(truncation);
    let (pi_h, pi_v) = pbs(truncation);

    let mut effects = Vec::with_capacity(4);
    for (arm_idx, arm) in [&pi_h, &pi_v].into_iter().enumerate() {
        let common = analyze
            .after(&filter)?
            .after(&qp)?
            .after(arm)?
            .after(&select)?;
        for (out_idx, final_proj) in [&pi_h, &pi_v].into_iter().enumerate() {
            let chain = final_proj.after(&common)?;
            let effect = chain.adjoint().after(&chain)?;
            let detector = DetectorId::from_index(arm_idx * 2 + out_idx);
            effects.push(MeasurementEffect {
                detector,
                effect: OpticalElement::new(
                    format!("effect({}, {})", basis.name(), detector.name()),
                    effect.matrix().clone(),
                    truncation,
                )?,
            });
        }
    }
    let mut loss_m = ndarray::Array2::eye(truncation.dim());
    for e in &effects {
        loss_m -= e.effect.matrix();
    }
    let loss = OpticalElement::new(format!("loss({})", basis.name()), loss_m, truncation)?;
    Ok(MeasurementSet {
        basis,
        effects,
        loss,
    })
}

/// Born-rule click probabilities for one input state: one probability per
/// detector plus the loss (filtered / undetected) probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickDistribution {
    pub detectors: [f64; 4],
    pub loss: f64,
}

impl ClickDistribution {
    pub fn total_click(&self) -> f64 {
        self.detectors.iter().sum()
    }

    /// Distribution conditioned on a click (renormalized over detectors).
    pub fn conditional(&self) -> [f64; 4] {
        let t = self.total_click();
        self.detectors.map(|p| p / t)
    }
}

/// Evaluates the Born rule of a measurement set on a normalized state.
pub fn click_distribution(s: &HybridState, set: &MeasurementSet) -> Result<ClickDistribution> {
    if (s.norm_sqr() - 1.0).abs() > 1e-9 {
        return Err(QkdError::InvalidInput(format!(
            "click_distribution needs a normalized state (norm^2 = {})",
            s.norm_sqr()
        )));
    }
    let mut detectors = [0.0; 4];
    for e in &set.effects {
        // effects are PSD; clamp away the numeric dust below zero
        detectors[e.detector.index()] = e.effect.expectation(s)?.max(0.0);
    }
    let loss = set.loss.expectation(s)?.max(0.0);
    Ok(ClickDistribution { detectors, loss })
}

/// One row of the crosstalk table: a prepared state measured in its matched
/// basis under a polarization misalignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrosstalkRow {
    pub label: MubLabel,
    pub clicks: [f64; 4],
    pub loss: f64,
}

impl CrosstalkRow {
    /// Click distribution renormalized over detected events.
    pub fn conditional(&self) -> [f64; 4] {
        let t: f64 = self.clicks.iter().sum();
        self.clicks.map(|p| p / t)
    }

    /// Projective efficiency: conditional probability of the mapped detector.
    pub fn efficiency(&self) -> f64 {
        self.conditional()[(self.label.index - 1) as usize]
    }

    /// Measurement error e_b = sum of the wrong-detector conditionals.
    pub fn qber(&self) -> f64 {
        1.0 - self.efficiency()
    }
}

/// 8 x 4 conditional crosstalk table (plus loss column), rows psi_1..phi_4.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrosstalkMatrix {
    pub misalignment: f64,
    pub rows: Vec<CrosstalkRow>,
}

impl CrosstalkMatrix {
    /// The matched-basis 4x4 block of one basis, renormalized over clicks.
    pub fn matched_block(&self, basis: MubBasis) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for row in self.rows.iter().filter(|r| r.label.basis == basis) {
            out[(row.label.index - 1) as usize] = row.conditional();
        }
        out
    }

    pub fn efficiencies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.efficiency()).collect()
    }

    pub fn mean_qber(&self) -> f64 {
        self.rows.iter().map(|r| r.qber()).sum::<f64>() / self.rows.len() as f64
    }

    /// CSV with 15-significant-digit values; columns DH1,DV1,DH2,DV2,loss.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,DH1,DV1,DH2,DV2,loss\n");
        for row in &self.rows {
            out.push_str(&row.label.name());
            for p in row.clicks.iter().chain(std::iter::once(&row.loss)) {
                out.push_str(&format!(",{p:.14e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Crosstalk of all eight states measured in their matched basis with a
/// single polarization-rotation misalignment applied before measurement.
pub fn crosstalk_matrix(
    misalignment: f64,
    charge: QPlateCharge,
    truncation: OamTruncation,
) -> Result<CrosstalkMatrix> {
    let rot = pol_rotation(misalignment, truncation);
    let sets = [
        measurement_effects(MubBasis::M1, charge, truncation)?,
        measurement_effects(MubBasis::M2, charge, truncation)?,
    ];
    let mut rows = Vec::with_capacity(8);
    for label in MubLabel::all() {
        let set = match label.basis {
            MubBasis::M1 => &sets[0],
            MubBasis::M2 => &sets[1],
        };
        let s = rot.apply(&mub_state(label, charge, truncation)?)?;
        let dist = click_distribution(&s, set)?;
        rows.push(CrosstalkRow {
            label,
            clicks: dist.detectors,
            loss: dist.loss,
        });
    }
    Ok(CrosstalkMatrix { misalignment, rows })
}

/// Solves for the misalignment angle whose mean matched-basis QBER equals
/// `target` (bisection; the mean QBER grows monotonically with the angle).
pub fn calibrate_misalignment(
    target: f64,
    charge: QPlateCharge,
    truncation: OamTruncation,
) -> Result<f64> {
    if !(0.0..=0.3).contains(&target) {
        return Err(QkdError::InvalidInput(format!(
            "target QBER {target} outside [0, 0.3]"
        )));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    let qber_at = |delta: f64| -> Result<f64> {
        Ok(crosstalk_matrix(delta, charge, truncation)?.mean_qber())
    };
    let (mut lo, mut hi) = (0.0_f64, 0.7_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if qber_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
