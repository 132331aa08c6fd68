//! Data re-uploading circuits used as univariate edge activations.
//!
//! A circuit of `L` layers starts from `|0⟩` and, in each layer, re-encodes
//! the input `x` and applies a trainable unitary. With the default template
//! every layer is `RY(x)`, `RZ(θ[l,0])`, `RX(θ[l,1])`, and the output is `⟨Z⟩`.
//!
//! Gradients are computed by the adjoint method: one forward sweep caching the
//! state after each gate, then one backward sweep carrying `U_after† Z ψ`.
//! For a gate `exp(-i a P / 2)` with post-gate state `ψ_k` and adjoint state
//! `λ_k`, `∂⟨Z⟩/∂a = Im(λ_k† P ψ_k)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{QuirkError, Result};
use crate::qsim::{expectation_z1, Axis, QubitState, Unitary2, C64, DEFAULT_MAX_QUBITS};

static CLAMPED_INPUTS: AtomicU64 = AtomicU64::new(0);

/// Number of circuit inputs that fell outside `[0, π]` and were clamped.
pub fn clamped_input_count() -> u64 {
    CLAMPED_INPUTS.load(Ordering::Relaxed)
}

#[inline]
fn clamp_input(x: f64) -> (f64, bool) {
    if (0.0..=PI).contains(&x) {
        (x, false)
    } else {
        let n = CLAMPED_INPUTS.fetch_add(1, Ordering::Relaxed) + 1;
        if n.is_power_of_two() {
            log::warn!("circuit input {x} outside [0, pi] clamped ({n} so far)");
        }
        (x.clamp(0.0, PI), true)
    }
}

/// Where a template gate takes its angle from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Input,
    Param(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateGate {
    pub axis: Axis,
    pub source: Source,
}

/// Gate sequence of one circuit layer. The first gate encodes the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateTemplate {
    gates: Vec<TemplateGate>,
    params_per_layer: usize,
}

impl Default for GateTemplate {
    fn default() -> Self {
        GateTemplate {
            gates: vec![
                TemplateGate { axis: Axis::Y, source: Source::Input },
                TemplateGate { axis: Axis::Z, source: Source::Param(0) },
                TemplateGate { axis: Axis::X, source: Source::Param(1) },
            ],
            params_per_layer: 2,
        }
    }
}

impl GateTemplate {
    /// Validates a layer template: the first gate reads the input, and the
    /// parameter indices used are exactly `0..P`, each once.
    pub fn new(gates: Vec<TemplateGate>) -> Result<Self> {
        match gates.first() {
            Some(TemplateGate { source: Source::Input, .. }) => {}
            _ => return Err(QuirkError::invalid("template must start with an input encoding gate")),
        }
        let mut used: Vec<usize> = gates
            .iter()
            .filter_map(|g| match g.source {
                Source::Param(i) => Some(i),
                Source::Input => None,
            })
            .collect();
        used.sort_unstable();
        if used.iter().enumerate().any(|(k, &i)| k != i) {
            return Err(QuirkError::invalid(format!(
                "template parameter indices must be 0..P with no gaps or repeats, got {used:?}"
            )));
        }
        Ok(GateTemplate {
            params_per_layer: used.len(),
            gates,
        })
    }

    pub fn gates(&self) -> &[TemplateGate] {
        &self.gates
    }

    pub fn params_per_layer(&self) -> usize {
        self.params_per_layer
    }
}

impl fmt::Display for GateTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, g) in self.gates.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            match g.source {
                Source::Input => write!(f, "{}:x", g.axis.name())?,
                Source::Param(i) => write!(f, "{}:{}", g.axis.name(), i)?,
            }
        }
        Ok(())
    }
}

impl FromStr for GateTemplate {
    type Err = QuirkError;

    /// Parses the `rx:x,rz:0,...` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let gates = s
            .split(',')
            .map(|tok| {
                let (axis, src) = tok
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| QuirkError::invalid(format!("template gate '{tok}' lacks ':'")))?;
                let axis = match axis.trim().to_ascii_lowercase().as_str() {
                    "rx" => Axis::X,
                    "ry" => Axis::Y,
                    "rz" => Axis::Z,
                    other => return Err(QuirkError::invalid(format!("unknown gate '{other}'"))),
                };
                let source = match src.trim() {
                    "x" => Source::Input,
                    n => Source::Param(
                        n.parse()
                            .map_err(|_| QuirkError::invalid(format!("bad parameter index '{n}'")))?,
                    ),
                };
                Ok(TemplateGate { axis, source })
            })
            .collect::<Result<Vec<_>>>()?;
        GateTemplate::new(gates)
    }
}

/// Trainable angles of one circuit, laid out as `[layer][qubit][param]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DRParams {
    template: GateTemplate,
    num_layers: usize,
    num_qubits: usize,
    entangle: bool,
    thetas: Vec<f64>,
}

impl DRParams {
    pub fn new(
        template: GateTemplate,
        num_layers: usize,
        num_qubits: usize,
        entangle: bool,
        thetas: Vec<f64>,
    ) -> Result<Self> {
        if num_layers == 0 || num_qubits == 0 {
            return Err(QuirkError::invalid("a circuit needs at least one layer and one qubit"));
        }
        let expected = num_layers * num_qubits * template.params_per_layer();
        if thetas.len() != expected {
            return Err(QuirkError::Shape {
                what: "circuit angles",
                expected,
                got: thetas.len(),
            });
        }
        check_finite(&thetas)?;
        Ok(DRParams {
            template,
            num_layers,
            num_qubits,
            entangle,
            thetas,
        })
    }

    /// Single-qubit circuit with the default template.
    pub fn single(num_layers: usize, thetas: Vec<f64>) -> Result<Self> {
        Self::new(GateTemplate::default(), num_layers, 1, false, thetas)
    }

    pub fn zeros(template: GateTemplate, num_layers: usize, num_qubits: usize, entangle: bool) -> Result<Self> {
        let n = num_layers * num_qubits * template.params_per_layer();
        Self::new(template, num_layers, num_qubits, entangle, vec![0.0; n])
    }

    /// Angles drawn from `Uniform(-π, π)`.
    pub fn random<R: Rng + ?Sized>(
        template: GateTemplate,
        num_layers: usize,
        num_qubits: usize,
        entangle: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let n = num_layers * num_qubits * template.params_per_layer();
        let thetas = (0..n).map(|_| rng.gen_range(-PI..PI)).collect();
        Self::new(template, num_layers, num_qubits, entangle, thetas)
    }

    pub fn template(&self) -> &GateTemplate {
        &self.template
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn entangle(&self) -> bool {
        self.entangle
    }

    pub fn params_per_layer(&self) -> usize {
        self.template.params_per_layer()
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    #[inline]
    pub fn index(&self, layer: usize, qubit: usize, param: usize) -> usize {
        (layer * self.num_qubits + qubit) * self.params_per_layer() + param
    }

    pub fn theta(&self, layer: usize, qubit: usize, param: usize) -> f64 {
        self.thetas[self.index(layer, qubit, param)]
    }

    /// Replaces all angles, rejecting non-finite values and length changes.
    pub fn set_thetas(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.thetas.len() {
            return Err(QuirkError::Shape {
                what: "circuit angles",
                expected: self.thetas.len(),
                got: values.len(),
            });
        }
        check_finite(values)?;
        self.thetas.copy_from_slice(values);
        Ok(())
    }

    /// Copy of the same circuit restricted to qubit `q`, as a 1-qubit circuit.
    pub fn qubit_slice(&self, q: usize) -> Result<DRParams> {
        if q >= self.num_qubits {
            return Err(QuirkError::Index {
                what: "circuit qubits",
                index: q,
                len: self.num_qubits,
            });
        }
        let p = self.params_per_layer();
        let thetas = (0..self.num_layers)
            .flat_map(|l| {
                let start = self.index(l, q, 0);
                self.thetas[start..start + p].iter().copied()
            })
            .collect();
        DRParams::new(self.template.clone(), self.num_layers, 1, false, thetas)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(QuirkError::invalid(format!(
            "circuit angle {i} is not finite ({})",
            values[i]
        ))),
        None => Ok(()),
    }
}

fn check_x(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(QuirkError::invalid(format!("circuit input must be finite, got {x}")))
    }
}

/// Exact derivatives of one circuit evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DrGradient {
    pub value: f64,
    /// Same layout as [`DRParams::thetas`].
    pub dthetas: Vec<f64>,
    pub dx: f64,
}

/// `⟨Z⟩` (on qubit 0 for multi-qubit circuits) of the circuit at input `x`.
/// Inputs outside `[0, π]` are clamped and counted.
pub fn dr_forward(x: f64, params: &DRParams) -> Result<f64> {
    check_x(x)?;
    let (x, _) = clamp_input(x);
    if params.num_qubits == 1 {
        Ok(forward_single(x, params))
    } else {
        forward_multi(x, params, DEFAULT_MAX_QUBITS)
    }
}

/// Multi-qubit evaluation: per layer every qubit encodes `x` and gets its
/// own trainable gates, then (when entangling) a CNOT ring `q → q+1 mod n`.
pub fn dr_forward_multiqubit(x: f64, params: &DRParams, max_qubits: usize) -> Result<f64> {
    check_x(x)?;
    if params.num_qubits < 2 {
        return Err(QuirkError::invalid("multi-qubit evaluation needs at least 2 qubits"));
    }
    let (x, _) = clamp_input(x);
    forward_multi(x, params, max_qubits)
}

/// Elementwise [`dr_forward`] over a batch, held as a `B×2` state array.
pub fn dr_forward_batch(xs: &[f64], params: &DRParams) -> Result<Vec<f64>> {
    for &x in xs {
        check_x(x)?;
    }
    if params.num_qubits != 1 {
        return xs.iter().map(|&x| dr_forward(x, params)).collect();
    }
    let enc_axis = encode_axis(params);
    let clamped: Vec<f64> = xs.iter().map(|&x| clamp_input(x).0).collect();
    let encoders: Vec<Unitary2> = clamped
        .iter()
        .map(|&x| Unitary2::rotation(enc_axis, x))
        .collect();
    let mut rows = vec![[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]; xs.len()];
    let gates = params.template.gates();
    let p = params.params_per_layer();
    for layer in 0..params.num_layers {
        let base = layer * p;
        // Consecutive trainable gates are fused into one matrix for the batch.
        let mut fused: Option<Unitary2> = None;
        for g in gates {
            match g.source {
                Source::Input => {
                    if let Some(u) = fused.take() {
                        rows.iter_mut().for_each(|r| *r = u.apply(*r));
                    }
                    if g.axis == enc_axis {
                        rows.iter_mut()
                            .zip(&encoders)
                            .for_each(|(r, e)| *r = e.apply(*r));
                    } else {
                        rows.iter_mut()
                            .zip(&clamped)
                            .for_each(|(r, &x)| *r = Unitary2::rotation(g.axis, x).apply(*r));
                    }
                }
                Source::Param(i) => {
                    let u = Unitary2::rotation(g.axis, params.thetas[base + i]);
                    fused = Some(match fused {
                        Some(prev) => u.mul(&prev),
                        None => u,
                    });
                }
            }
        }
        if let Some(u) = fused {
            rows.iter_mut().for_each(|r| *r = u.apply(*r));
        }
    }
    Ok(rows.iter().map(|r| expectation_z1(*r).clamp(-1.0, 1.0)).collect())
}

/// Value and exact gradient with respect to every angle and to `x`.
/// `dx` is zero when `x` was clamped.
pub fn dr_gradient(x: f64, params: &DRParams) -> Result<DrGradient> {
    check_x(x)?;
    let (xc, clamped) = clamp_input(x);
    let mut dthetas = vec![0.0; params.thetas.len()];
    let (value, dx) = value_and_grad_unchecked(xc, params, &mut dthetas);
    Ok(DrGradient {
        value,
        dthetas,
        dx: if clamped { 0.0 } else { dx },
    })
}

fn encode_axis(params: &DRParams) -> Axis {
    params.template.gates()[0].axis
}

#[inline]
fn angle_of(g: &TemplateGate, x: f64, thetas: &[f64], base: usize) -> f64 {
    match g.source {
        Source::Input => x,
        Source::Param(i) => thetas[base + i],
    }
}

/// Forward pass with `x` already inside `[0, π]`.
pub(crate) fn forward_unchecked(x: f64, params: &DRParams) -> f64 {
    if params.num_qubits == 1 {
        forward_single(x, params)
    } else {
        forward_multi(x, params, params.num_qubits).unwrap_or(f64::NAN)
    }
}

fn forward_single(x: f64, params: &DRParams) -> f64 {
    let p = params.params_per_layer();
    let mut state = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    let enc_axis = encode_axis(params);
    let enc = Unitary2::rotation(enc_axis, x);
    for layer in 0..params.num_layers {
        let base = layer * p;
        for g in params.template.gates() {
            let u = match g.source {
                Source::Input if g.axis == enc_axis => enc,
                _ => Unitary2::rotation(g.axis, angle_of(g, x, &params.thetas, base)),
            };
            state = u.apply(state);
        }
    }
    expectation_z1(state).clamp(-1.0, 1.0)
}

enum Op {
    Rot {
        axis: Axis,
        qubit: usize,
        /// `None` for the input, otherwise the angle index.
        slot: Option<usize>,
        gate: Unitary2,
    },
    Cnot(usize, usize),
}

fn multi_ops(x: f64, params: &DRParams) -> Vec<Op> {
    let n = params.num_qubits;
    let mut ops = Vec::new();
    for layer in 0..params.num_layers {
        for q in 0..n {
            let base = params.index(layer, q, 0);
            for g in params.template.gates() {
                let slot = match g.source {
                    Source::Input => None,
                    Source::Param(i) => Some(base + i),
                };
                ops.push(Op::Rot {
                    axis: g.axis,
                    qubit: q,
                    slot,
                    gate: Unitary2::rotation(g.axis, angle_of(g, x, &params.thetas, base)),
                });
            }
        }
        if params.entangle {
            for q in 0..n {
                ops.push(Op::Cnot(q, (q + 1) % n));
            }
        }
    }
    ops
}

fn forward_multi(x: f64, params: &DRParams, max_qubits: usize) -> Result<f64> {
    let mut state = QubitState::zero(params.num_qubits, max_qubits)?;
    for op in multi_ops(x, params) {
        match op {
            Op::Rot { qubit, gate, .. } => state.apply_unchecked(&gate, qubit),
            Op::Cnot(c, t) => state.cnot_unchecked(c, t),
        }
    }
    Ok(state.expectation_z_unchecked(0))
}

/// Writes `∂/∂θ` into `dthetas` and returns `(value, ∂/∂x)`. `x` must already
/// be in range and `dthetas` must have the angle count of `params`.
pub(crate) fn value_and_grad_unchecked(x: f64, params: &DRParams, dthetas: &mut [f64]) -> (f64, f64) {
    if params.num_qubits == 1 {
        grad_single(x, params, dthetas)
    } else {
        grad_multi(x, params, dthetas)
    }
}

fn grad_single(x: f64, params: &DRParams, dthetas: &mut [f64]) -> (f64, f64) {
    let p = params.params_per_layer();
    let gates = params.template.gates();
    let k = gates.len() * params.num_layers;
    let enc_axis = encode_axis(params);
    let enc = Unitary2::rotation(enc_axis, x);

    let mut mats = Vec::with_capacity(k);
    let mut states = Vec::with_capacity(k);
    let mut state = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    for layer in 0..params.num_layers {
        let base = layer * p;
        for g in gates {
            let u = match g.source {
                Source::Input if g.axis == enc_axis => enc,
                _ => Unitary2::rotation(g.axis, angle_of(g, x, &params.thetas, base)),
            };
            state = u.apply(state);
            mats.push(u);
            states.push(state);
        }
    }
    let value = expectation_z1(state).clamp(-1.0, 1.0);

    let mut lambda = [state[0], -state[1]];
    let mut dx = 0.0;
    for idx in (0..k).rev() {
        let g = &gates[idx % gates.len()];
        let psi = states[idx];
        let pv = g.axis.pauli(psi);
        let d = (lambda[0].conj() * pv[0] + lambda[1].conj() * pv[1]).im;
        match g.source {
            Source::Input => dx += d,
            Source::Param(i) => dthetas[(idx / gates.len()) * p + i] = d,
        }
        lambda = mats[idx].apply_dagger(lambda);
    }
    (value, dx)
}

fn grad_multi(x: f64, params: &DRParams, dthetas: &mut [f64]) -> (f64, f64) {
    let ops = multi_ops(x, params);
    let mut psi = QubitState::zero(params.num_qubits, params.num_qubits)
        .expect("register size validated by caller");
    for op in &ops {
        match op {
            Op::Rot { qubit, gate, .. } => psi.apply_unchecked(gate, *qubit),
            Op::Cnot(c, t) => psi.cnot_unchecked(*c, *t),
        }
    }
    let value = psi.expectation_z_unchecked(0);
    let mut lambda = psi.clone();
    lambda.apply_z_unchecked(0);

    let mut dx = 0.0;
    for op in ops.iter().rev() {
        match op {
            Op::Rot { axis, qubit, slot, gate } => {
                let mut p_psi = psi.clone();
                p_psi.apply_pauli_unchecked(*axis, *qubit);
                let d = lambda.inner(&p_psi).im;
                match slot {
                    Some(i) => dthetas[*i] = d,
                    None => dx += d,
                }
                psi.apply_dagger_unchecked(gate, *qubit);
                lambda.apply_dagger_unchecked(gate, *qubit);
            }
            Op::Cnot(c, t) => {
                psi.cnot_unchecked(*c, *t);
                lambda.cnot_unchecked(*c, *t);
            }
        }
    }
    (value, dx)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::qsim::{rx, ry, rz};

    /// Gate-by-gate evaluation through the public `QubitState` API, written
    /// independently of the fast paths above.
    fn oracle(x: f64, p: &DRParams) -> f64 {
        let n = p.num_qubits();
        let mut s = QubitState::zero(n, 12).unwrap();
        for l in 0..p.num_layers() {
            for q in 0..n {
                for g in p.template().gates() {
                    let a = match g.source {
                        Source::Input => x,
                        Source::Param(i) => p.theta(l, q, i),
                    };
                    let u = match g.axis {
                        Axis::X => rx(a),
                        Axis::Y => ry(a),
                        Axis::Z => rz(a),
                    }
                    .unwrap();
                    s = s.apply(&u, q).unwrap();
                }
            }
            if p.entangle() {
                for q in 0..n {
                    s = s.cnot(q, (q + 1) % n).unwrap();
                }
            }
        }
        s.expectation_z(0).unwrap()
    }

    fn shifted(p: &DRParams, i: usize, h: f64) -> DRParams {
        let mut t = p.thetas().to_vec();
        t[i] += h;
        let mut q = p.clone();
        q.set_thetas(&t).unwrap();
        q
    }

    fn random_params(rng: &mut ChaCha8Rng, layers: usize, qubits: usize, entangle: bool) -> DRParams {
        DRParams::random(GateTemplate::default(), layers, qubits, entangle, rng).unwrap()
    }

    #[test]
    fn one_layer_zero_angles_is_cosine() {
        let p = DRParams::single(1, vec![0.0, 0.0]).unwrap();
        for x in [0.0, 0.4, 1.0, 2.5, PI] {
            assert!((dr_forward(x, &p).unwrap() - x.cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_with_rz_only_is_one() {
        let p = DRParams::single(1, vec![1.234, 0.0]).unwrap();
        assert!((dr_forward(0.0, &p).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_layers_seed_42_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = random_params(&mut rng, 3, 1, false);
        let v = dr_forward(1.0, &p).unwrap();
        assert!((v - oracle(1.0, &p)).abs() < 1e-12);
    }

    #[test]
    fn nan_rejected() {
        let p = DRParams::single(1, vec![0.0, 0.0]).unwrap();
        assert!(dr_forward(f64::NAN, &p).is_err());
        assert!(dr_gradient(f64::NAN, &p).is_err());
        assert!(DRParams::single(1, vec![f64::NAN, 0.0]).is_err());
        let mut q = p.clone();
        assert!(q.set_thetas(&[0.0, f64::INFINITY]).is_err());
        assert_eq!(q, p);
    }

    #[test]
    fn out_of_domain_inputs_are_clamped() {
        let p = DRParams::single(2, vec![0.3, -0.2, 1.1, 0.4]).unwrap();
        let before = clamped_input_count();
        assert_eq!(dr_forward(-0.5, &p).unwrap(), dr_forward(0.0, &p).unwrap());
        assert_eq!(dr_forward(4.0, &p).unwrap(), dr_forward(PI, &p).unwrap());
        assert!(clamped_input_count() >= before + 2);
        assert_eq!(dr_gradient(4.0, &p).unwrap().dx, 0.0);
    }

    #[test]
    fn batch_edge_cases() {
        let p = DRParams::single(1, vec![0.0, 0.0]).unwrap();
        assert!(dr_forward_batch(&[], &p).unwrap().is_empty());
        let out = dr_forward_batch(&[0.0, PI], &p).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15 && (out[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn batch_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 5, 1, false);
        let xs: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..PI)).collect();
        let batch = dr_forward_batch(&xs, &p).unwrap();
        for (x, b) in xs.iter().zip(batch) {
            assert!((dr_forward(*x, &p).unwrap() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_cosine() {
        let p = DRParams::single(1, vec![0.0, 0.0]).unwrap();
        for x in [0.2, 1.0, 2.0, 3.0] {
            let g = dr_gradient(x, &p).unwrap();
            assert!((g.dx + x.sin()).abs() < 1e-12);
        }
        let g = dr_gradient(FRAC_PI_2, &p).unwrap();
        assert!(g.dthetas[0].abs() < 1e-12);
        // Parameter-shift oracle for the same angle.
        let ps = (dr_forward(FRAC_PI_2, &shifted(&p, 0, FRAC_PI_2)).unwrap()
            - dr_forward(FRAC_PI_2, &shifted(&p, 0, -FRAC_PI_2)).unwrap())
            / 2.0;
        assert!(ps.abs() < 1e-12);
    }

    #[test]
    fn gradient_seed_7_matches_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_params(&mut rng, 4, 1, false);
        let x = rng.gen_range(0.2..3.0);
        let g = dr_gradient(x, &p).unwrap();
        for i in 0..p.len() {
            let ps = (oracle(x, &shifted(&p, i, FRAC_PI_2)) - oracle(x, &shifted(&p, i, -FRAC_PI_2))) / 2.0;
            let h = 1e-4;
            let fd = (oracle(x, &shifted(&p, i, h)) - oracle(x, &shifted(&p, i, -h))) / (2.0 * h);
            assert!((g.dthetas[i] - ps).abs() < 1e-10, "angle {i}");
            assert!((g.dthetas[i] - fd).abs() < 1e-6, "angle {i}");
        }
        let h = 1e-4;
        let fd = (oracle(x + h, &p) - oracle(x - h, &p)) / (2.0 * h);
        assert!((g.dx - fd).abs() < 1e-6);
    }

    #[test]
    fn multiqubit_without_entanglement_factorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = random_params(&mut rng, 3, 2, false);
            let x = rng.gen_range(0.0..PI);
            let single = dr_forward(x, &p.qubit_slice(0).unwrap()).unwrap();
            let multi = dr_forward_multiqubit(x, &p, 5).unwrap();
            assert!((single - multi).abs() < 1e-12);
        }
    }

    #[test]
    fn multiqubit_zero_angles_entangled_matches_oracle() {
        let p = DRParams::zeros(GateTemplate::default(), 1, 2, true).unwrap();
        for x in [0.0, 0.5, 1.3, 2.2, PI] {
            let v = dr_forward_multiqubit(x, &p, 5).unwrap();
            assert!((v - oracle(x, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn multiqubit_capacity() {
        let p = DRParams::zeros(GateTemplate::default(), 1, 6, true).unwrap();
        assert!(matches!(
            dr_forward_multiqubit(1.0, &p, 5),
            Err(QuirkError::Capacity { requested: 6, max: 5 })
        ));
        let one = DRParams::single(1, vec![0.0, 0.0]).unwrap();
        assert!(dr_forward_multiqubit(1.0, &one, 5).is_err());
    }

    #[test]
    fn multiqubit_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for qubits in [2, 3] {
            let p = random_params(&mut rng, 2, qubits, true);
            let x = 1.1;
            let g = dr_gradient(x, &p).unwrap();
            for i in 0..p.len() {
                let ps = (oracle(x, &shifted(&p, i, FRAC_PI_2)) - oracle(x, &shifted(&p, i, -FRAC_PI_2))) / 2.0;
                assert!((g.dthetas[i] - ps).abs() < 1e-10);
            }
            let h = 1e-4;
            let fd = (oracle(x + h, &p) - oracle(x - h, &p)) / (2.0 * h);
            assert!((g.dx - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn template_parsing() {
        let t: GateTemplate = "ry:x,rz:0,rx:1".parse().unwrap();
        assert_eq!(t, GateTemplate::default());
        assert_eq!(t.to_string(), "ry:x,rz:0,rx:1");
        let su2: GateTemplate = "ry:x,rz:0,ry:1,rz:2".parse().unwrap();
        assert_eq!(su2.params_per_layer(), 3);
        assert!("rz:0,ry:x".parse::<GateTemplate>().is_err());
        assert!("ry:x,rz:1".parse::<GateTemplate>().is_err());
        assert!("ry:x,rq:0".parse::<GateTemplate>().is_err());
    }

    #[test]
    fn custom_template_gradient() {
        let t: GateTemplate = "rx:x,rz:0,ry:1,rz:2,ry:x".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = DRParams::random(t, 3, 1, false, &mut rng).unwrap();
        let x = 0.9;
        assert!((dr_forward(x, &p).unwrap() - oracle(x, &p)).abs() < 1e-12);
        let batch = dr_forward_batch(&[x], &p).unwrap();
        assert!((batch[0] - oracle(x, &p)).abs() < 1e-12);
        let g = dr_gradient(x, &p).unwrap();
        let h = 1e-5;
        let fd = (oracle(x + h, &p) - oracle(x - h, &p)) / (2.0 * h);
        assert!((g.dx - fd).abs() < 1e-7);
        for i in 0..p.len() {
            let ps = (oracle(x, &shifted(&p, i, FRAC_PI_2)) - oracle(x, &shifted(&p, i, -FRAC_PI_2))) / 2.0;
            assert!((g.dthetas[i] - ps).abs() < 1e-10);
        }
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            #[test]
            fn output_in_unit_range(seed in any::<u64>(), layers in 1usize..7, x in 0.0f64..PI) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = random_params(&mut rng, layers, 1, false);
                let v = dr_forward(x, &p).unwrap();
                prop_assert!((-1.0..=1.0).contains(&v));
            }

            #[test]
            fn period_four_pi(seed in any::<u64>(), layers in 1usize..7, x in 0.0f64..PI) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = random_params(&mut rng, layers, 1, false);
                // Compare the unclamped kernel at x and x + 4π.
                let a = forward_unchecked(x, &p);
                let b = forward_unchecked(x + 4.0 * PI, &p);
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn same_seed_same_params(seed in any::<u64>()) {
                let a = random_params(&mut ChaCha8Rng::seed_from_u64(seed), 3, 1, false);
                let b = random_params(&mut ChaCha8Rng::seed_from_u64(seed), 3, 1, false);
                prop_assert_eq!(a.thetas(), b.thetas());
            }
        }
    }
}
