//! Statevector kernel for the circuits used as edge activations.
//!
//! Single-qubit work is plain 2×2 complex matrix-vector products. A small
//! multi-qubit register (Kronecker-ordered, qubit 0 is the most significant
//! bit of the basis index) covers the entangled edge variant.

use num_complex::Complex64;

use crate::error::{QuirkError, Result};

pub type C64 = Complex64;

/// Default register size limit for multi-qubit edges.
pub const DEFAULT_MAX_QUBITS: usize = 5;
/// Absolute register size limit; a 12-qubit state is 4096 amplitudes.
pub const HARD_MAX_QUBITS: usize = 12;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Rotation axis of a Pauli rotation gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "rx",
            Axis::Y => "ry",
            Axis::Z => "rz",
        }
    }

    /// Applies the Pauli matrix of this axis to a single-qubit amplitude pair.
    #[inline]
    pub fn pauli(self, v: [C64; 2]) -> [C64; 2] {
        match self {
            Axis::X => [v[1], v[0]],
            Axis::Y => [C64::new(v[1].im, -v[1].re), C64::new(-v[0].im, v[0].re)],
            Axis::Z => [v[0], -v[1]],
        }
    }
}

/// A 2×2 complex matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary2 {
    pub m: [[C64; 2]; 2],
}

fn check_angle(angle: f64) -> Result<()> {
    if angle.is_finite() {
        Ok(())
    } else {
        Err(QuirkError::invalid(format!("rotation angle must be finite, got {angle}")))
    }
}

/// Pauli-X rotation `exp(-i a X / 2)`.
pub fn rx(angle: f64) -> Result<Unitary2> {
    check_angle(angle)?;
    Ok(Unitary2::rotation(Axis::X, angle))
}

/// Pauli-Y rotation `exp(-i a Y / 2)`.
pub fn ry(angle: f64) -> Result<Unitary2> {
    check_angle(angle)?;
    Ok(Unitary2::rotation(Axis::Y, angle))
}

/// Pauli-Z rotation `exp(-i a Z / 2)`.
pub fn rz(angle: f64) -> Result<Unitary2> {
    check_angle(angle)?;
    Ok(Unitary2::rotation(Axis::Z, angle))
}

impl Unitary2 {
    pub const IDENTITY: Unitary2 = Unitary2 {
        m: [[ONE, ZERO], [ZERO, ONE]],
    };

    pub fn new(m: [[C64; 2]; 2]) -> Self {
        Unitary2 { m }
    }

    /// Rotation without the finiteness check; callers guarantee a finite angle.
    #[inline]
    pub fn rotation(axis: Axis, angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        match axis {
            Axis::X => Unitary2 {
                m: [
                    [C64::new(c, 0.0), C64::new(0.0, -s)],
                    [C64::new(0.0, -s), C64::new(c, 0.0)],
                ],
            },
            Axis::Y => Unitary2 {
                m: [
                    [C64::new(c, 0.0), C64::new(-s, 0.0)],
                    [C64::new(s, 0.0), C64::new(c, 0.0)],
                ],
            },
            Axis::Z => Unitary2 {
                m: [
                    [C64::new(c, -s), ZERO],
                    [ZERO, C64::new(c, s)],
                ],
            },
        }
    }

    /// Matrix product `self · rhs`.
    #[inline]
    pub fn mul(&self, rhs: &Unitary2) -> Unitary2 {
        let a = &self.m;
        let b = &rhs.m;
        Unitary2 {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
        }
    }

    pub fn dagger(&self) -> Unitary2 {
        let m = &self.m;
        Unitary2 {
            m: [
                [m[0][0].conj(), m[1][0].conj()],
                [m[0][1].conj(), m[1][1].conj()],
            ],
        }
    }

    #[inline]
    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    /// `U† v` without materializing the adjoint.
    #[inline]
    pub fn apply_dagger(&self, v: [C64; 2]) -> [C64; 2] {
        [
            self.m[0][0].conj() * v[0] + self.m[1][0].conj() * v[1],
            self.m[0][1].conj() * v[0] + self.m[1][1].conj() * v[1],
        ]
    }

    /// Largest entrywise deviation of `U·U†` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.mul(&self.dagger());
        let mut worst = 0.0f64;
        for (r, row) in p.m.iter().enumerate() {
            for (c, z) in row.iter().enumerate() {
                let target = if r == c { ONE } else { ZERO };
                worst = worst.max((z - target).norm());
            }
        }
        worst
    }
}

/// `⟨Z⟩` of a single-qubit state.
#[inline]
pub fn expectation_z1(v: [C64; 2]) -> f64 {
    v[0].norm_sqr() - v[1].norm_sqr()
}

/// Statevector of an `n`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitState {
    amps: Vec<C64>,
    num_qubits: usize,
}

impl QubitState {
    /// `|0…0⟩` on `num_qubits` qubits, refusing registers above `max_qubits`.
    pub fn zero(num_qubits: usize, max_qubits: usize) -> Result<Self> {
        let limit = max_qubits.min(HARD_MAX_QUBITS);
        if num_qubits == 0 {
            return Err(QuirkError::invalid("a register needs at least one qubit"));
        }
        if num_qubits > limit {
            return Err(QuirkError::Capacity {
                requested: num_qubits,
                max: limit,
            });
        }
        let mut amps = vec![ZERO; 1 << num_qubits];
        amps[0] = ONE;
        Ok(QubitState { amps, num_qubits })
    }

    /// Computational basis state; `bits[q]` is the value of qubit `q`.
    pub fn basis(bits: &[bool]) -> Result<Self> {
        let mut state = Self::zero(bits.len(), HARD_MAX_QUBITS)?;
        let n = bits.len();
        let index = bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0usize, |acc, (q, _)| acc | (1 << (n - 1 - q)));
        state.amps[0] = ZERO;
        state.amps[index] = ONE;
        Ok(state)
    }

    /// Builds a state from raw amplitudes; the length must be a power of two
    /// and the vector must be normalized to within 1e-10.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(QuirkError::invalid(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let num_qubits = len.trailing_zeros() as usize;
        if num_qubits > HARD_MAX_QUBITS {
            return Err(QuirkError::Capacity {
                requested: num_qubits,
                max: HARD_MAX_QUBITS,
            });
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(QuirkError::invalid("non-finite amplitude"));
        }
        let state = QubitState { amps, num_qubits };
        let norm = state.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(QuirkError::invalid(format!("state norm {norm} differs from 1")));
        }
        Ok(state)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q < self.num_qubits {
            Ok(())
        } else {
            Err(QuirkError::Index {
                what: "qubit register",
                index: q,
                len: self.num_qubits,
            })
        }
    }

    #[inline]
    fn mask(&self, q: usize) -> usize {
        1 << (self.num_qubits - 1 - q)
    }

    /// Returns a new state with `gate` applied to qubit `target`.
    pub fn apply(&self, gate: &Unitary2, target: usize) -> Result<Self> {
        let mut out = self.clone();
        out.apply_in_place(gate, target)?;
        Ok(out)
    }

    pub fn apply_in_place(&mut self, gate: &Unitary2, target: usize) -> Result<()> {
        self.check_qubit(target)?;
        self.apply_unchecked(gate, target);
        Ok(())
    }

    pub(crate) fn apply_unchecked(&mut self, gate: &Unitary2, target: usize) {
        if self.num_qubits == 1 {
            let v = gate.apply([self.amps[0], self.amps[1]]);
            self.amps[0] = v[0];
            self.amps[1] = v[1];
            return;
        }
        let mask = self.mask(target);
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let j = i | mask;
                let v = gate.apply([self.amps[i], self.amps[j]]);
                self.amps[i] = v[0];
                self.amps[j] = v[1];
            }
        }
    }

    pub(crate) fn apply_dagger_unchecked(&mut self, gate: &Unitary2, target: usize) {
        let mask = self.mask(target);
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let j = i | mask;
                let v = gate.apply_dagger([self.amps[i], self.amps[j]]);
                self.amps[i] = v[0];
                self.amps[j] = v[1];
            }
        }
    }

    /// Applies the Pauli matrix of `axis` on `target` (used by the adjoint pass).
    pub(crate) fn apply_pauli_unchecked(&mut self, axis: Axis, target: usize) {
        let mask = self.mask(target);
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let j = i | mask;
                let v = axis.pauli([self.amps[i], self.amps[j]]);
                self.amps[i] = v[0];
                self.amps[j] = v[1];
            }
        }
    }

    /// Returns a new state with a CNOT applied.
    pub fn cnot(&self, control: usize, target: usize) -> Result<Self> {
        let mut out = self.clone();
        out.cnot_in_place(control, target)?;
        Ok(out)
    }

    pub fn cnot_in_place(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(QuirkError::invalid(format!(
                "cnot control and target are both qubit {control}"
            )));
        }
        self.cnot_unchecked(control, target);
        Ok(())
    }

    pub(crate) fn cnot_unchecked(&mut self, control: usize, target: usize) {
        let cm = self.mask(control);
        let tm = self.mask(target);
        for i in 0..self.amps.len() {
            if i & cm != 0 && i & tm == 0 {
                self.amps.swap(i, i | tm);
            }
        }
    }

    /// `⟨ψ|Z_q|ψ⟩`.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        Ok(self.expectation_z_unchecked(qubit))
    }

    pub(crate) fn expectation_z_unchecked(&self, qubit: usize) -> f64 {
        let mask = self.mask(qubit);
        let value: f64 = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum();
        value.clamp(-1.0, 1.0)
    }

    /// Applies `Z_q` in place (the observable, not a rotation).
    pub(crate) fn apply_z_unchecked(&mut self, qubit: usize) {
        self.apply_pauli_unchecked(Axis::Z, qubit);
    }

    /// `⟨self|other⟩`.
    pub(crate) fn inner(&self, other: &QubitState) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// A batch of independent single-qubit states stored as a `B×2` array.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    rows: Vec<[C64; 2]>,
}

impl BatchState {
    /// `B` copies of `|0⟩`.
    pub fn zeros(batch: usize) -> Self {
        BatchState {
            rows: vec![[ONE, ZERO]; batch],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[C64; 2]] {
        &self.rows
    }

    /// Applies the same gate to every row.
    pub fn apply_uniform(&mut self, gate: &Unitary2) {
        for row in &mut self.rows {
            *row = gate.apply(*row);
        }
    }

    /// Applies `gates[b]` to row `b`.
    pub fn apply_each(&mut self, gates: &[Unitary2]) -> Result<()> {
        if gates.len() != self.rows.len() {
            return Err(QuirkError::Shape {
                what: "batched gates",
                expected: self.rows.len(),
                got: gates.len(),
            });
        }
        for (row, gate) in self.rows.iter_mut().zip(gates) {
            *row = gate.apply(*row);
        }
        Ok(())
    }

    pub fn expectation_z(&self) -> Vec<f64> {
        self.rows.iter().map(|r| expectation_z1(*r).clamp(-1.0, 1.0)).collect()
    }
}
