//! Dense complex linear algebra on the composite Hilbert space
//! C^2 (polarization) (x) C^(2*l_max+1) (orbital angular momentum).
//!
//! States are stored in the H/V (x) integer-OAM product basis; circular and
//! diagonal polarization kets are always constructed from H/V amplitudes,
//! never stored.  Subnormalized states (squared norm below one) represent
//! post-selection branches, so norms are allowed to shrink under projectors.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QkdError, Result};

/// Tolerance used for norm bookkeeping and hermiticity checks.
pub const NORM_TOL: f64 = 1e-12;

/// Linear polarization basis label of the stored amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    pub const BOTH: [Polarization; 2] = [Polarization::H, Polarization::V];

    fn row(self) -> usize {
        match self {
            Polarization::H => 0,
            Polarization::V => 1,
        }
    }
}

/// Symmetric OAM truncation band: kept quanta are l in [-l_max, l_max].
///
/// The q-plate operator is not closed on the infinite OAM ladder; this band
/// is the closure used by the whole crate.  Amplitudes shifted past the band
/// edge are dropped, which shows up as norm loss detectable by callers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OamTruncation {
    l_max: u32,
}

impl OamTruncation {
    pub fn new(l_max: u32) -> Self {
        OamTruncation { l_max }
    }

    pub fn l_max(&self) -> i32 {
        self.l_max as i32
    }

    /// Number of kept OAM modes, `2*l_max + 1`.
    pub fn oam_dim(&self) -> usize {
        2 * self.l_max as usize + 1
    }

    /// Full composite dimension, `2 * (2*l_max + 1)`.
    pub fn dim(&self) -> usize {
        2 * self.oam_dim()
    }

    pub fn contains(&self, l: i32) -> bool {
        l.unsigned_abs() <= self.l_max
    }

    /// Flat index of (pol, l) in the stored amplitude vector.
    pub fn flat(&self, pol: Polarization, l: i32) -> usize {
        debug_assert!(self.contains(l));
        pol.row() * self.oam_dim() + (l + self.l_max()) as usize
    }
}

/// Basis label (pol, l) of one amplitude slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisIndex {
    pub pol: Polarization,
    pub l: i32,
}

/// A pure (possibly subnormalized) state of the polarization-OAM space.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    amps: Array1<Complex64>,
    truncation: OamTruncation,
}

impl HybridState {
    /// The all-zero vector; useful as an accumulator for superpositions.
    pub fn zero(truncation: OamTruncation) -> Self {
        HybridState {
            amps: Array1::zeros(truncation.dim()),
            truncation,
        }
    }

    /// Unit basis ket |pol, l>.
    pub fn basis_ket(pol: Polarization, l: i32, truncation: OamTruncation) -> Result<Self> {
        if !truncation.contains(l) {
            return Err(QkdError::BandViolation {
                l,
                l_max: truncation.l_max,
            });
        }
        let mut s = Self::zero(truncation);
        s.amps[truncation.flat(pol, l)] = Complex64::new(1.0, 0.0);
        Ok(s)
    }

    /// Builds a state from raw amplitudes in flat-index order.
    ///
    /// The squared norm must not exceed one (beyond tolerance): states above
    /// unit norm have no physical reading in this crate.
    pub fn from_amplitudes(amps: Vec<Complex64>, truncation: OamTruncation) -> Result<Self> {
        if amps.len() != truncation.dim() {
            return Err(QkdError::DimensionMismatch {
                expected: truncation.dim(),
                found: amps.len(),
            });
        }
        let s = HybridState {
            amps: Array1::from_vec(amps),
            truncation,
        };
        if s.norm_sqr() > 1.0 + NORM_TOL {
            return Err(QkdError::InvalidInput(format!(
                "state squared norm {} exceeds 1",
                s.norm_sqr()
            )));
        }
        Ok(s)
    }

    /// Linear combination `ca * a + cb * b`.
    pub fn superpose(a: &Self, ca: Complex64, b: &Self, cb: Complex64) -> Result<Self> {
        if a.truncation != b.truncation {
            return Err(QkdError::DimensionMismatch {
                expected: a.dim(),
                found: b.dim(),
            });
        }
        Ok(HybridState {
            amps: &a.amps * ca + &b.amps * cb,
            truncation: a.truncation,
        })
    }

    pub fn truncation(&self) -> OamTruncation {
        self.truncation
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    /// Amplitude at (pol, l); zero outside the band.
    pub fn amplitude(&self, pol: Polarization, l: i32) -> Complex64 {
        if self.truncation.contains(l) {
            self.amps[self.truncation.flat(pol, l)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    pub fn amplitudes(&self) -> &Array1<Complex64> {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Inner product <self|other>, conjugate-linear in `self`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        if self.truncation != other.truncation {
            return Err(QkdError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(self
            .amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Squared overlap |<self|other>|^2; the global-phase-free state equality.
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// Returns `(state / norm, norm)`; fails on (near-)zero states.
    pub fn normalized(&self) -> Result<(Self, f64)> {
        let n = self.norm();
        if n <= 1e-15 {
            return Err(QkdError::DegenerateState { norm: n });
        }
        Ok((
            HybridState {
                amps: &self.amps / Complex64::new(n, 0.0),
                truncation: self.truncation,
            },
            n,
        ))
    }
}

/// A linear operator on [`HybridState`]: q-plates, wave-plate unitaries,
/// projectors and mode filters are all values of this type.
#[derive(Debug, Clone)]
pub struct OpticalElement {
    label: String,
    matrix: Array2<Complex64>,
    truncation: OamTruncation,
}

impl OpticalElement {
    pub fn new(
        label: impl Into<String>,
        matrix: Array2<Complex64>,
        truncation: OamTruncation,
    ) -> Result<Self> {
        let d = truncation.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(QkdError::DimensionMismatch {
                expected: d,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(OpticalElement {
            label: label.into(),
            matrix,
            truncation,
        })
    }

    pub fn identity(truncation: OamTruncation) -> Self {
        OpticalElement {
            label: "identity".into(),
            matrix: Array2::eye(truncation.dim()),
            truncation,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    pub fn truncation(&self) -> OamTruncation {
        self.truncation
    }

    /// Applies the element: `matrix * state`.  Norm may shrink for projectors
    /// and for q-plate amplitudes pushed past the truncation band.
    pub fn apply(&self, s: &HybridState) -> Result<HybridState> {
        if s.truncation != self.truncation {
            return Err(QkdError::DimensionMismatch {
                expected: self.truncation.dim(),
                found: s.dim(),
            });
        }
        Ok(HybridState {
            amps: self.matrix.dot(&s.amps),
            truncation: s.truncation,
        })
    }

    /// Composition `self . inner` (apply `inner` first).
    pub fn after(&self, inner: &Self) -> Result<Self> {
        if self.truncation != inner.truncation {
            return Err(QkdError::DimensionMismatch {
                expected: self.truncation.dim(),
                found: inner.truncation.dim(),
            });
        }
        Ok(OpticalElement {
            label: format!("{} . {}", self.label, inner.label),
            matrix: self.matrix.dot(&inner.matrix),
            truncation: self.truncation,
        })
    }

    /// Hermitian adjoint.
    pub fn adjoint(&self) -> Self {
        OpticalElement {
            label: format!("{}^+", self.label),
            matrix: self.matrix.t().mapv(|z| z.conj()),
            truncation: self.truncation,
        }
    }

    /// Expectation value `<s| self |s>` (real part; the operators fed here
    /// are Hermitian effects).
    pub fn expectation(&self, s: &HybridState) -> Result<f64> {
        let applied = self.apply(s)?;
        Ok(s.inner(&applied)?.re)
    }

    /// Max-abs difference from the identity matrix.
    pub fn deviation_from_identity(&self) -> f64 {
        let eye: Array2<Complex64> = Array2::eye(self.truncation.dim());
        (&self.matrix - &eye)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Max-abs difference between two elements' matrices.
    pub fn deviation_from(&self, other: &Self) -> f64 {
        (&self.matrix - &other.matrix)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}
