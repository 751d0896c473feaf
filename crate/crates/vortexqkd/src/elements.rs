//! Constructors for the optical operators used by the protocol: q-plate,
//! polarization reflection (half-wave-plate unitary), linear-polarization
//! projector, polarizing beam splitter and single-mode-fiber zero-OAM filter.
//!
//! Circular-basis convention: |L> = (|H> + i|V>)/sqrt(2) and
//! |R> = (|H> - i|V>)/sqrt(2).  With this sign choice a q-plate maps
//! |H>|0> to (|R>|2q> + |L>|-2q>)/sqrt(2) and the linear-polarization
//! projector applied to that vortex yields
//! (e^{-i a}/2) (cos a |H> + sin a |V>) (|2q> + e^{2i a} |-2q>),
//! which is asserted by a dedicated convention test below.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QkdError, Result};
use crate::state::{OamTruncation, OpticalElement, Polarization};

/// Topological charge of a q-plate; the OAM shift per pass is `2q` quanta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QPlateCharge {
    twice_q: i32,
}

impl QPlateCharge {
    /// Builds a charge from q itself; `2q` must be a nonzero integer.
    pub fn new(q: f64) -> Result<Self> {
        let twice = 2.0 * q;
        let rounded = twice.round();
        if (twice - rounded).abs() > 1e-9 || rounded == 0.0 {
            return Err(QkdError::InvalidInput(format!(
                "q-plate charge must be a nonzero half-integer, got q = {q}"
            )));
        }
        Ok(QPlateCharge {
            twice_q: rounded as i32,
        })
    }

    pub fn q(&self) -> f64 {
        self.twice_q as f64 / 2.0
    }

    /// OAM shift in quanta, `2q`.
    pub fn oam_shift(&self) -> i32 {
        self.twice_q
    }

    /// Default band half-width `l_max = 4 * |2q|`: twice the minimum needed
    /// by the two cascaded q-plates of the measurement chain, so no pipeline
    /// amplitude ever reaches the band edge.
    pub fn default_truncation(&self) -> OamTruncation {
        OamTruncation::new(4 * self.twice_q.unsigned_abs())
    }
}

fn circular_kets() -> ([Complex64; 2], [Complex64; 2]) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let left = [Complex64::new(s, 0.0), Complex64::new(0.0, s)];
    let right = [Complex64::new(s, 0.0), Complex64::new(0.0, -s)];
    (left, right)
}

/// Q-plate operator: swaps circular polarization handedness while shifting
/// OAM by -2q (R -> L) or +2q (L -> R).  Amplitudes that would leave the
/// truncation band map to zero, so callers can detect leakage as norm loss.
pub fn qplate(charge: QPlateCharge, truncation: OamTruncation) -> Result<OpticalElement> {
    let shift = charge.oam_shift();
    if truncation.l_max() < shift.abs() {
        return Err(QkdError::BandViolation {
            l: shift,
            l_max: truncation.l_max() as u32,
        });
    }
    let dim = truncation.dim();
    let mut m = Array2::<Complex64>::zeros((dim, dim));
    let (left, right) = circular_kets();
    for l in -truncation.l_max()..=truncation.l_max() {
        // |L><R| (x) |l-2q><l|  and  |R><L| (x) |l+2q><l|
        for (target, out, inp) in [(l - shift, &left, &right), (l + shift, &right, &left)] {
            if truncation.contains(target) {
                for (a, pa) in Polarization::BOTH.into_iter().enumerate() {
                    for (b, pb) in Polarization::BOTH.into_iter().enumerate() {
                        m[[truncation.flat(pa, target), truncation.flat(pb, l)]] +=
                            out[a] * inp[b].conj();
                    }
                }
            }
        }
    }
    OpticalElement::new(format!("qplate(q={})", charge.q()), m, truncation)
}

fn pol_block(m2: [[Complex64; 2]; 2], truncation: OamTruncation, label: &str) -> OpticalElement {
    let dim = truncation.dim();
    let mut m = Array2::<Complex64>::zeros((dim, dim));
    for (a, pa) in Polarization::BOTH.into_iter().enumerate() {
        for (b, pb) in Polarization::BOTH.into_iter().enumerate() {
            if m2[a][b].norm_sqr() > 0.0 {
                for l in -truncation.l_max()..=truncation.l_max() {
                    m[[truncation.flat(pa, l), truncation.flat(pb, l)]] = m2[a][b];
                }
            }
        }
    }
    OpticalElement::new(label, m, truncation).expect("square by construction")
}

/// Polarization reflection [[cos a, sin a], [sin a, -cos a]] (x) identity:
/// the Jones matrix of a half-wave plate with fast axis at a/2.  Unitary,
/// Hermitian and involutory for every angle.
pub fn pol_reflection(alpha: f64, truncation: OamTruncation) -> OpticalElement {
    let (s, c) = alpha.sin_cos();
    pol_block(
        [
            [Complex64::new(c, 0.0), Complex64::new(s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(-c, 0.0)],
        ],
        truncation,
        &format!("reflection({alpha:.6})"),
    )
}

/// Half-wave plate at fast-axis angle theta; equals `pol_reflection(2*theta)`.
pub fn hwp(theta: f64, truncation: OamTruncation) -> OpticalElement {
    pol_reflection(2.0 * theta, truncation)
}

/// Rank-one projector onto the linear polarization at angle `alpha`
/// (cos a |H> + sin a |V>), identity on OAM.
pub fn pol_projector(alpha: f64, truncation: OamTruncation) -> OpticalElement {
    let (s, c) = alpha.sin_cos();
    pol_block(
        [
            [Complex64::new(c * c, 0.0), Complex64::new(c * s, 0.0)],
            [Complex64::new(s * c, 0.0), Complex64::new(s * s, 0.0)],
        ],
        truncation,
        &format!("projector({alpha:.6})"),
    )
}

/// Proper polarization rotation by `delta` (misalignment model); equals the
/// composition of two reflections, `pol_reflection(delta) . pol_reflection(0)`.
pub fn pol_rotation(delta: f64, truncation: OamTruncation) -> OpticalElement {
    let (s, c) = delta.sin_cos();
    pol_block(
        [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ],
        truncation,
        &format!("rotation({delta:.6})"),
    )
}

/// Polarizing beam splitter modeled as the lossless projector pair
/// (Pi_H, Pi_V); the two spatial output paths are tracked by the caller.
pub fn pbs(truncation: OamTruncation) -> (OpticalElement, OpticalElement) {
    (
        pol_projector(0.0, truncation),
        pol_projector(std::f64::consts::FRAC_PI_2, truncation),
    )
}

/// Single-mode-fiber filter: projector onto the l = 0 OAM subspace for both
/// polarizations.
pub fn smf_filter(truncation: OamTruncation) -> OpticalElement {
    let dim = truncation.dim();
    let mut m = Array2::<Complex64>::zeros((dim, dim));
    for pol in Polarization::BOTH {
        let i = truncation.flat(pol, 0);
        m[[i, i]] = Complex64::new(1.0, 0.0);
    }
    OpticalElement::new("smf", m, truncation).expect("square by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::HybridState;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn q_half() -> QPlateCharge {
        QPlateCharge::new(0.5).unwrap()
    }

    fn trunc() -> OamTruncation {
        q_half().default_truncation()
    }

    #[test]
    fn charge_validation() {
        assert!(QPlateCharge::new(0.5).is_ok());
        assert!(QPlateCharge::new(1.0).is_ok());
        assert!(QPlateCharge::new(-1.5).is_ok());
        assert!(QPlateCharge::new(0.0).is_err());
        assert!(QPlateCharge::new(0.3).is_err());
        assert_eq!(q_half().oam_shift(), 1);
        assert_eq!(trunc().l_max(), 4);
    }

    /// Convention test: q-plate output of |H>|0> is (|R>|2q> + |L>|-2q>)/sqrt(2),
    /// i.e. H amplitudes 1/2 at l = +-1 and V amplitudes -i/2, +i/2.
    #[test]
    fn qplate_on_h0_gives_radial_vortex() {
        let qp = qplate(q_half(), trunc()).unwrap();
        let out = qp
            .apply(&HybridState::basis_ket(Polarization::H, 0, trunc()).unwrap())
            .unwrap();
        let expect = [
            (Polarization::H, 1, Complex64::new(0.5, 0.0)),
            (Polarization::H, -1, Complex64::new(0.5, 0.0)),
            (Polarization::V, 1, Complex64::new(0.0, -0.5)),
            (Polarization::V, -1, Complex64::new(0.0, 0.5)),
        ];
        for (pol, l, want) in expect {
            assert!(
                (out.amplitude(pol, l) - want).norm() < 1e-14,
                "amplitude at ({pol:?},{l})"
            );
        }
        assert_relative_eq!(out.norm_sqr(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn qplate_twice_roundtrips_circular_kets() {
        // |L>|0> -> |R>|2q> -> |L>|0>
        let qp = qplate(q_half(), trunc()).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![Complex64::new(0.0, 0.0); trunc().dim()];
        amps[trunc().flat(Polarization::H, 0)] = Complex64::new(s, 0.0);
        amps[trunc().flat(Polarization::V, 0)] = Complex64::new(0.0, s);
        let left = HybridState::from_amplitudes(amps, trunc()).unwrap();
        let twice = qp.apply(&qp.apply(&left).unwrap()).unwrap();
        assert!(left.fidelity(&twice).unwrap() > 1.0 - 1e-13);
        assert_relative_eq!(twice.norm_sqr(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn qplate_interior_band_is_norm_preserving_and_edge_leaks() {
        let qp = qplate(q_half(), trunc()).unwrap();
        for l in -3..=3 {
            for pol in Polarization::BOTH {
                let s = HybridState::basis_ket(pol, l, trunc()).unwrap();
                assert_relative_eq!(qp.apply(&s).unwrap().norm_sqr(), 1.0, epsilon = 1e-13);
            }
        }
        // |H>|l_max> has the |R> half shifted out of band: half the norm leaks
        let edge = HybridState::basis_ket(Polarization::H, 4, trunc()).unwrap();
        assert_relative_eq!(qp.apply(&edge).unwrap().norm_sqr(), 0.5, epsilon = 1e-13);
    }

    #[test]
    fn qplate_requires_band_at_least_shift() {
        assert!(qplate(q_half(), OamTruncation::new(0)).is_err());
        assert!(qplate(QPlateCharge::new(1.0).unwrap(), OamTruncation::new(1)).is_err());
    }

    #[test]
    fn reflection_diag_at_zero_and_maps_d_a_at_quarter_pi() {
        let t = trunc();
        let u0 = pol_reflection(0.0, t);
        let h = HybridState::basis_ket(Polarization::H, 0, t).unwrap();
        let v = HybridState::basis_ket(Polarization::V, 0, t).unwrap();
        assert!(u0.apply(&h).unwrap().fidelity(&h).unwrap() > 1.0 - 1e-14);
        let mv = u0.apply(&v).unwrap();
        assert!((mv.amplitude(Polarization::V, 0) - Complex64::new(-1.0, 0.0)).norm() < 1e-14);

        let u = pol_reflection(std::f64::consts::FRAC_PI_4, t);
        let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let d = HybridState::superpose(&h, s, &v, s).unwrap();
        let a = HybridState::superpose(&h, s, &v, -s).unwrap();
        assert!(u.apply(&d).unwrap().fidelity(&h).unwrap() > 1.0 - 1e-13);
        assert!(u.apply(&a).unwrap().fidelity(&v).unwrap() > 1.0 - 1e-13);
    }

    #[test]
    fn reflection_unitary_hermitian_involutory_on_grid() {
        let t = trunc();
        for k in 0..100 {
            let alpha = k as f64 * 0.061 - 2.5;
            let u = pol_reflection(alpha, t);
            let udag_u = u.adjoint().after(&u).unwrap();
            assert!(
                udag_u.deviation_from_identity() < 1e-12,
                "unitary at {alpha}"
            );
            assert!(
                u.adjoint().deviation_from(&u) < 1e-12,
                "hermitian at {alpha}"
            );
            let uu = u.after(&u).unwrap();
            assert!(
                uu.deviation_from_identity() < 1e-12,
                "involutory at {alpha}"
            );
        }
        for alpha in [
            0.0,
            std::f64::consts::FRAC_PI_8,
            std::f64::consts::FRAC_PI_4,
            1.0,
        ] {
            let u = pol_reflection(alpha, t);
            assert!(u.after(&u).unwrap().deviation_from_identity() < 1e-12);
        }
    }

    #[test]
    fn hwp_parametrization_doubles_the_angle() {
        let t = trunc();
        let theta = 0.37;
        assert!(hwp(theta, t).deviation_from(&pol_reflection(2.0 * theta, t)) < 1e-15);
    }

    #[test]
    fn projector_idempotent_hermitian_and_conjugation_factorization() {
        let t = trunc();
        for k in 0..100 {
            let alpha = k as f64 * 0.0628 - 3.0;
            let p = pol_projector(alpha, t);
            assert!(p.after(&p).unwrap().deviation_from(&p) < 1e-12);
            assert!(p.adjoint().deviation_from(&p) < 1e-12);
            // P(a) = U(a) P(0) U(a); the single-sided product instead obeys
            // the intertwining relation U(a) P(0) = P(a) U(a).
            let u = pol_reflection(alpha, t);
            let conj = u.after(&pol_projector(0.0, t)).unwrap().after(&u).unwrap();
            assert!(conj.deviation_from(&p) < 1e-12, "conjugation at {alpha}");
            let lhs = u.after(&pol_projector(0.0, t)).unwrap();
            let rhs = p.after(&u).unwrap();
            assert!(lhs.deviation_from(&rhs) < 1e-12, "intertwine at {alpha}");
        }
    }

    #[test]
    fn projector_completeness() {
        let t = trunc();
        let (ph, pv) = pbs(t);
        let sum = OpticalElement::new("sum", ph.matrix() + pv.matrix(), t).unwrap();
        assert!(sum.deviation_from_identity() < 1e-14);
    }

    /// Projection identity on the radial vortex:
    /// P(a) Q |H>|0> = (e^{-ia}/2)(cos a |H> + sin a |V>)(|2q> + e^{2ia} |-2q>).
    #[test]
    fn projector_on_vortex_matches_closed_form() {
        let t = trunc();
        let vortex = qplate(q_half(), t)
            .unwrap()
            .apply(&HybridState::basis_ket(Polarization::H, 0, t).unwrap())
            .unwrap();
        for alpha in [0.0, 0.3, std::f64::consts::FRAC_PI_4, 1.1, 2.9] {
            let got = pol_projector(alpha, t).apply(&vortex).unwrap();
            let g = Complex64::new(0.0, -alpha).exp() * 0.5;
            let ph = Complex64::new(0.0, 2.0 * alpha).exp();
            let (sa, ca) = alpha.sin_cos();
            let mut amps = vec![Complex64::new(0.0, 0.0); t.dim()];
            amps[t.flat(Polarization::H, 1)] = g * ca;
            amps[t.flat(Polarization::H, -1)] = g * ca * ph;
            amps[t.flat(Polarization::V, 1)] = g * sa;
            amps[t.flat(Polarization::V, -1)] = g * sa * ph;
            let want = HybridState::from_amplitudes(amps, t).unwrap();
            let diff: f64 = got
                .amplitudes()
                .iter()
                .zip(want.amplitudes().iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(diff < 1e-14, "projection identity at alpha = {alpha}");
        }
    }

    /// The state-mapping identity behind the measurement: a q-plate applied
    /// to |H>(|2q> + e^{2ia}|-2q>)/sqrt2 moves the OAM superposition onto the
    /// zero-OAM polarization, (1/2)[(|L> + e^{2ia}|R>)|0> + |R>|4q> +
    /// e^{2ia}|L>|-4q>]; the V-arm variant holds up to a global phase -i.
    #[test]
    fn qplate_maps_oam_superposition_to_polarization() {
        let t = trunc();
        let qp = qplate(q_half(), t).unwrap();
        let s2 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let half = Complex64::new(0.5, 0.0);
        let l_pol = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)].map(|z| z * s2);
        let r_pol = [Complex64::new(1.0, 0.0), Complex64::new(0.0, -1.0)].map(|z| z * s2);
        for alpha1 in [
            0.0,
            std::f64::consts::FRAC_PI_4,
            std::f64::consts::FRAC_PI_2,
            0.9,
        ] {
            let ph = Complex64::new(0.0, 2.0 * alpha1).exp();
            for (pol, global) in [
                (Polarization::H, Complex64::new(1.0, 0.0)),
                (Polarization::V, Complex64::new(0.0, -1.0)),
            ] {
                let sign = if pol == Polarization::H { 1.0 } else { -1.0 };
                let mut amps = vec![Complex64::new(0.0, 0.0); t.dim()];
                amps[t.flat(pol, 1)] = s2;
                amps[t.flat(pol, -1)] = s2 * ph;
                let input = HybridState::from_amplitudes(amps, t).unwrap();
                let got = qp.apply(&input).unwrap();

                let mut want = vec![Complex64::new(0.0, 0.0); t.dim()];
                for (k, p) in Polarization::BOTH.into_iter().enumerate() {
                    // (sign*|L> + e^{2ia}|R>)|0> with a -i global phase on the V arm
                    want[t.flat(p, 0)] = global * half * (l_pol[k] * sign + ph * r_pol[k]);
                    want[t.flat(p, 2)] = global * half * r_pol[k];
                    want[t.flat(p, -2)] = global * half * ph * l_pol[k] * sign;
                }
                let want = HybridState::from_amplitudes(want, t).unwrap();
                let diff: f64 = got
                    .amplitudes()
                    .iter()
                    .zip(want.amplitudes().iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(diff < 1e-13, "{pol:?} arm at alpha1 = {alpha1}: {diff}");

                // the fiber keeps exactly the mapped zero-OAM half
                let filtered = smf_filter(t).apply(&got).unwrap();
                assert_relative_eq!(filtered.norm_sqr(), 0.5, epsilon = 1e-13);
                for l in [2, -2] {
                    for p in Polarization::BOTH {
                        assert!(filtered.amplitude(p, l).norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn pbs_eigenstates_and_completeness() {
        let t = trunc();
        let (ph, pv) = pbs(t);
        let h2 = HybridState::basis_ket(Polarization::H, 2, t).unwrap();
        assert!(ph.apply(&h2).unwrap().fidelity(&h2).unwrap() > 1.0 - 1e-14);
        assert!(pv.apply(&h2).unwrap().norm_sqr() < 1e-28);
    }

    #[test]
    fn smf_keeps_only_zero_oam() {
        let t = trunc();
        let f = smf_filter(t);
        assert!(f.after(&f).unwrap().deviation_from(&f) < 1e-15);
        let h4 = HybridState::basis_ket(Polarization::H, 4, t).unwrap();
        assert!(f.apply(&h4).unwrap().norm_sqr() < 1e-30);
        let h0 = HybridState::basis_ket(Polarization::H, 0, t).unwrap();
        assert!(f.apply(&h0).unwrap().fidelity(&h0).unwrap() > 1.0 - 1e-15);
    }

    #[test]
    fn rotation_is_reflection_pair() {
        let t = trunc();
        let delta = 0.21;
        let pair = pol_reflection(delta, t)
            .after(&pol_reflection(0.0, t))
            .unwrap();
        assert!(pol_rotation(delta, t).deviation_from(&pair) < 1e-14);
        assert!(pol_rotation(0.0, t).deviation_from_identity() < 1e-15);
    }
}
