//! Network assembly: layers of units summing circuit edges, rescale maps
//! between layers, and an optional dense output head.
//!
//! Edge `(i, u)` of a layer connects input `i` to unit `u` and is stored at
//! index `i * units + u`. Unit `u` outputs `h_u = Σ_i DR(x_i; θ_iu)` over its
//! active edges. Between layers each unit output is mapped into the circuit
//! domain by `((h / I_u) + (1 - b)) / 2 · π`, where `I_u` is the number of
//! active edges into `u`.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dr::{self, DRParams, GateTemplate};
use crate::error::{QuirkError, Result};
use crate::qsim::DEFAULT_MAX_QUBITS;

/// Model file format versions this build reads.
pub const SUPPORTED_FORMAT_VERSIONS: &[i64] = &[1];
pub const FORMAT_VERSION: i64 = 1;

/// Samples per gradient work item; fixed so reductions are order-stable.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub units: usize,
    pub dr_layers: usize,
    #[serde(default = "one")]
    pub qubits_per_edge: usize,
    #[serde(default)]
    pub entangle: bool,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn edges(&self) -> usize {
        self.fan_in * self.units
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub dense_head: bool,
    /// The `b` flag of the rescale map.
    pub rescale_bias: bool,
    pub template: GateTemplate,
    pub seed: u64,
}

impl NetworkSpec {
    /// Chains layers of the given widths; `dr_layers` is either one depth for
    /// every layer or one per layer.
    pub fn from_widths(input_dim: usize, widths: &[usize], dr_layers: &[usize]) -> Result<Self> {
        if widths.is_empty() {
            return Err(QuirkError::invalid("a network needs at least one layer"));
        }
        let depth = |k: usize| -> Result<usize> {
            match dr_layers.len() {
                1 => Ok(dr_layers[0]),
                n if n == widths.len() => Ok(dr_layers[k]),
                n => Err(QuirkError::Shape {
                    what: "per-layer circuit depths",
                    expected: widths.len(),
                    got: n,
                }),
            }
        };
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input_dim;
        for (k, &units) in widths.iter().enumerate() {
            layers.push(LayerSpec {
                fan_in,
                units,
                dr_layers: depth(k)?,
                qubits_per_edge: 1,
                entangle: false,
            });
            fan_in = units;
        }
        let spec = NetworkSpec {
            input_dim,
            layers,
            dense_head: false,
            rescale_bias: false,
            template: GateTemplate::default(),
            seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_dense_head(mut self, on: bool) -> Self {
        self.dense_head = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_qubits(mut self, qubits: usize, entangle: bool) -> Self {
        for l in &mut self.layers {
            l.qubits_per_edge = qubits;
            l.entangle = entangle;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(QuirkError::invalid("input_dim must be positive"));
        }
        let Some(last) = self.layers.last() else {
            return Err(QuirkError::invalid("a network needs at least one layer"));
        };
        let mut fan_in = self.input_dim;
        for (k, l) in self.layers.iter().enumerate() {
            if l.fan_in != fan_in {
                return Err(QuirkError::Shape {
                    what: "layer fan_in",
                    expected: fan_in,
                    got: l.fan_in,
                });
            }
            if l.units == 0 || l.dr_layers == 0 || l.qubits_per_edge == 0 {
                return Err(QuirkError::invalid(format!(
                    "layer {k}: units, dr_layers and qubits_per_edge must be positive"
                )));
            }
            if l.qubits_per_edge > DEFAULT_MAX_QUBITS {
                return Err(QuirkError::Capacity {
                    requested: l.qubits_per_edge,
                    max: DEFAULT_MAX_QUBITS,
                });
            }
            fan_in = l.units;
        }
        if !self.dense_head && last.units != 1 {
            return Err(QuirkError::invalid(format!(
                "without a dense head the last layer must have one unit, got {}",
                last.units
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub params: DRParams,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub edges: Vec<Edge>,
}

impl Layer {
    #[inline]
    pub fn edge_index(&self, input: usize, unit: usize) -> usize {
        input * self.spec.units + unit
    }

    pub fn edge(&self, input: usize, unit: usize) -> &Edge {
        &self.edges[self.edge_index(input, unit)]
    }

    /// Number of active edges entering `unit`.
    pub fn unit_fan_in(&self, unit: usize) -> usize {
        (0..self.spec.fan_in)
            .filter(|&i| self.edge(i, unit).active)
            .count()
    }

    /// Unit outputs `Σ_i DR(x_i; θ_iu)` over active edges.
    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        if inputs.len() != self.spec.fan_in {
            return Err(QuirkError::Shape {
                what: "layer input",
                expected: self.spec.fan_in,
                got: inputs.len(),
            });
        }
        let mut out = vec![0.0; self.spec.units];
        for (i, &x) in inputs.iter().enumerate() {
            for (u, slot) in out.iter_mut().enumerate() {
                let e = self.edge(i, u);
                if e.active {
                    *slot += dr::dr_forward(x, &e.params)?;
                }
            }
        }
        Ok(out)
    }
}

/// Unit outputs of one layer; see [`Layer::forward`].
pub fn layer_forward(inputs: &[f64], layer: &Layer) -> Result<Vec<f64>> {
    layer.forward(inputs)
}

/// Maps a unit sum in `[-I, I]` to `[0, π]`. Values outside `±I` are clamped.
#[inline]
pub fn rescale_value(v: f64, fan_in: usize, bias: bool) -> f64 {
    if fan_in == 0 {
        return 0.0;
    }
    let i = fan_in as f64;
    let b = if bias { 1.0 } else { 0.0 };
    ((v.clamp(-i, i) / i) + (1.0 - b)) / 2.0 * PI
}

#[inline]
fn rescale_slope(v: f64, fan_in: usize) -> f64 {
    let i = fan_in as f64;
    if fan_in == 0 || v.abs() > i {
        0.0
    } else {
        PI / (2.0 * i)
    }
}

pub fn rescale(values: &[f64], fan_in: usize, bias: bool) -> Vec<f64> {
    values.iter().map(|&v| rescale_value(v, fan_in, bias)).collect()
}

/// Per-feature affine map from `[min, max]` to `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.min) / (self.max - self.min) * PI).clamp(0.0, PI)
    }
}

/// All intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Circuit inputs of each layer (normalized features, then rescaled sums).
    pub layer_inputs: Vec<Vec<f64>>,
    /// Unit sums of each layer before rescaling.
    pub unit_outputs: Vec<Vec<f64>>,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
    pub dense_w: Vec<f64>,
    pub dense_b: f64,
    pub input_norm: Option<Vec<FeatureRange>>,
}

/// Gradient with the same shape as the model's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `edges[layer][edge]` holds angle derivatives; empty for inactive edges.
    pub edges: Vec<Vec<Vec<f64>>>,
    pub dense_w: Vec<f64>,
    pub dense_b: f64,
}

impl Gradients {
    /// Flattened in the order of [`Model::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.edges.iter().flatten().flatten().copied().collect();
        if !self.dense_w.is_empty() {
            v.extend_from_slice(&self.dense_w);
            v.push(self.dense_b);
        }
        v
    }
}

impl Model {
    /// Random angles from `Uniform(-π, π)` seeded by `spec.seed`; dense head
    /// starts as the identity map.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Self::build(spec, |l| {
            DRParams::random(
                l.template.clone(),
                l.dr_layers,
                l.qubits,
                l.entangle,
                &mut rng,
            )
        })
    }

    /// All angles zero, so every edge computes `cos(x)` at depth 1.
    pub fn zeroed(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Self::build(spec, |l| DRParams::zeros(l.template.clone(), l.dr_layers, l.qubits, l.entangle))
    }

    fn build(spec: NetworkSpec, mut make: impl FnMut(&EdgeShape) -> Result<DRParams>) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.layers.len());
        for ls in &spec.layers {
            let shape = EdgeShape {
                template: &spec.template,
                dr_layers: ls.dr_layers,
                qubits: ls.qubits_per_edge,
                entangle: ls.entangle,
            };
            let edges = (0..ls.edges())
                .map(|_| Ok(Edge { params: make(&shape)?, active: true }))
                .collect::<Result<Vec<_>>>()?;
            layers.push(Layer { spec: ls.clone(), edges });
        }
        let dense_w = if spec.dense_head {
            vec![1.0; spec.layers.last().map_or(1, |l| l.units)]
        } else {
            Vec::new()
        };
        Ok(Model {
            spec,
            layers,
            dense_w,
            dense_b: 0.0,
            input_norm: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Fits the `[min, max] → [0, π]` input map from raw training rows.
    /// Constant features get a unit-width range centred on their value.
    pub fn fit_input_norm<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        let n = self.input_dim();
        let mut ranges = vec![FeatureRange { min: f64::INFINITY, max: f64::NEG_INFINITY }; n];
        let mut seen = 0usize;
        for row in rows {
            if row.len() != n {
                return Err(QuirkError::Shape { what: "input row", expected: n, got: row.len() });
            }
            for (r, &x) in ranges.iter_mut().zip(row) {
                r.min = r.min.min(x);
                r.max = r.max.max(x);
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(QuirkError::invalid("cannot fit input normalization on zero rows"));
        }
        for r in &mut ranges {
            if r.min >= r.max {
                let c = r.min;
                r.min = c - 0.5;
                r.max = c + 0.5;
            }
        }
        self.input_norm = Some(ranges);
        Ok(())
    }

    pub fn set_input_norm(&mut self, ranges: Vec<FeatureRange>) -> Result<()> {
        if ranges.len() != self.input_dim() {
            return Err(QuirkError::Shape {
                what: "input normalization",
                expected: self.input_dim(),
                got: ranges.len(),
            });
        }
        if let Some(r) = ranges.iter().find(|r| !(r.min < r.max) || !r.min.is_finite() || !r.max.is_finite()) {
            return Err(QuirkError::invalid(format!(
                "input range needs finite min < max, got [{}, {}]",
                r.min, r.max
            )));
        }
        self.input_norm = Some(ranges);
        Ok(())
    }

    /// Raw features to circuit angles in `[0, π]`.
    pub fn normalize_input(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let norm = self
            .input_norm
            .as_ref()
            .ok_or_else(|| QuirkError::State("input normalization has not been fitted".into()))?;
        if raw.len() != norm.len() {
            return Err(QuirkError::Shape {
                what: "network input",
                expected: norm.len(),
                got: raw.len(),
            });
        }
        if let Some(x) = raw.iter().find(|x| !x.is_finite()) {
            return Err(QuirkError::invalid(format!("network input must be finite, got {x}")));
        }
        Ok(raw.iter().zip(norm).map(|(&x, r)| r.apply(x)).collect())
    }

    pub fn forward(&self, raw: &[f64]) -> Result<f64> {
        let t = self.normalize_input(raw)?;
        Ok(self.forward_normalized(&t))
    }

    pub fn trace(&self, raw: &[f64]) -> Result<Trace> {
        let t = self.normalize_input(raw)?;
        Ok(self.trace_normalized(&t))
    }

    /// Forward pass on inputs already mapped into `[0, π]`.
    pub fn forward_normalized(&self, inputs: &[f64]) -> f64 {
        self.trace_normalized(inputs).output
    }

    pub fn trace_normalized(&self, inputs: &[f64]) -> Trace {
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut unit_outputs = Vec::with_capacity(self.layers.len());
        let mut a = inputs.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut h = vec![0.0; layer.spec.units];
            for (i, &x) in a.iter().enumerate() {
                let x = x.clamp(0.0, PI);
                for (u, slot) in h.iter_mut().enumerate() {
                    let e = layer.edge(i, u);
                    if e.active {
                        *slot += dr::forward_unchecked(x, &e.params);
                    }
                }
            }
            let next = if k + 1 < self.layers.len() {
                h.iter()
                    .enumerate()
                    .map(|(u, &v)| rescale_value(v, layer.unit_fan_in(u), self.spec.rescale_bias))
                    .collect()
            } else {
                Vec::new()
            };
            layer_inputs.push(std::mem::replace(&mut a, next));
            unit_outputs.push(h);
        }
        let last = unit_outputs.last().expect("validated non-empty");
        let output = self.head(last);
        Trace {
            layer_inputs,
            unit_outputs,
            output,
        }
    }

    pub(crate) fn head(&self, last: &[f64]) -> f64 {
        if self.spec.dense_head {
            self.dense_w.iter().zip(last).map(|(w, h)| w * h).sum::<f64>() + self.dense_b
        } else {
            last[0]
        }
    }

    /// Number of trainable values: active edge angles plus dense weights and bias.
    pub fn param_count(&self) -> usize {
        self.angle_count() + self.dense_count()
    }

    pub fn angle_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.edges)
            .filter(|e| e.active)
            .map(|e| e.params.len())
            .sum()
    }

    fn dense_count(&self) -> usize {
        if self.spec.dense_head {
            self.dense_w.len() + 1
        } else {
            0
        }
    }

    pub fn active_edge_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.edges).filter(|e| e.active).count()
    }

    /// Active edge angles in `(layer, input, unit)` order, then dense weights and bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for e in self.layers.iter().flat_map(|l| &l.edges).filter(|e| e.active) {
            v.extend_from_slice(e.params.thetas());
        }
        if self.spec.dense_head {
            v.extend_from_slice(&self.dense_w);
            v.push(self.dense_b);
        }
        v
    }

    /// Inverse of [`Model::flat_params`]; rejects non-finite values.
    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(QuirkError::Shape {
                what: "flat parameter vector",
                expected: self.param_count(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(QuirkError::invalid(format!("parameter {i} is not finite")));
        }
        let mut off = 0;
        for e in self.layers.iter_mut().flat_map(|l| &mut l.edges).filter(|e| e.active) {
            let n = e.params.len();
            e.params.set_thetas(&values[off..off + n])?;
            off += n;
        }
        if self.spec.dense_head {
            let n = self.dense_w.len();
            self.dense_w.copy_from_slice(&values[off..off + n]);
            self.dense_b = values[off + n];
        }
        Ok(())
    }

    fn zero_gradients(&self) -> Gradients {
        Gradients {
            edges: self
                .layers
                .iter()
                .map(|l| {
                    l.edges
                        .iter()
                        .map(|e| if e.active { vec![0.0; e.params.len()] } else { Vec::new() })
                        .collect()
                })
                .collect(),
            dense_w: vec![0.0; self.dense_w.len()],
            dense_b: 0.0,
        }
    }

    /// Backpropagates one sample and adds `weight · ∂(½ (y - t)²)/∂params`
    /// into `grad`. Returns the prediction.
    fn accumulate_sample(&self, inputs: &[f64], target: f64, weight: f64, grad: &mut Gradients) -> f64 {
        let n_layers = self.layers.len();
        // Forward, keeping per-edge input derivatives and angle gradients.
        let mut a = inputs.iter().map(|x| x.clamp(0.0, PI)).collect::<Vec<_>>();
        let mut hs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut edge_dx: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut edge_dth: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_layers);
        for (k, layer) in self.layers.iter().enumerate() {
            let mut h = vec![0.0; layer.spec.units];
            let mut dxs = vec![0.0; layer.edges.len()];
            let mut dths = vec![Vec::new(); layer.edges.len()];
            for (i, &x) in a.iter().enumerate() {
                for (u, slot) in h.iter_mut().enumerate() {
                    let idx = layer.edge_index(i, u);
                    let e = &layer.edges[idx];
                    if !e.active {
                        continue;
                    }
                    let mut d = vec![0.0; e.params.len()];
                    let (v, dx) = dr::value_and_grad_unchecked(x, &e.params, &mut d);
                    *slot += v;
                    dxs[idx] = dx;
                    dths[idx] = d;
                }
            }
            if k + 1 < n_layers {
                a = h
                    .iter()
                    .enumerate()
                    .map(|(u, &v)| rescale_value(v, layer.unit_fan_in(u), self.spec.rescale_bias))
                    .collect();
            }
            hs.push(h);
            edge_dx.push(dxs);
            edge_dth.push(dths);
        }
        let last = hs.last().expect("non-empty");
        let y = self.head(last);
        let dy = (y - target) * weight;

        let mut g_h: Vec<f64> = if self.spec.dense_head {
            for (j, hj) in last.iter().enumerate() {
                grad.dense_w[j] += dy * hj;
            }
            grad.dense_b += dy;
            self.dense_w.iter().map(|w| dy * w).collect()
        } else {
            vec![dy]
        };

        for k in (0..n_layers).rev() {
            let layer = &self.layers[k];
            let mut g_a = vec![0.0; layer.spec.fan_in];
            for i in 0..layer.spec.fan_in {
                for (u, &gu) in g_h.iter().enumerate() {
                    let idx = layer.edge_index(i, u);
                    if !layer.edges[idx].active || gu == 0.0 {
                        continue;
                    }
                    for (acc, d) in grad.edges[k][idx].iter_mut().zip(&edge_dth[k][idx]) {
                        *acc += gu * d;
                    }
                    g_a[i] += gu * edge_dx[k][idx];
                }
            }
            if k > 0 {
                let prev = &self.layers[k - 1];
                g_h = g_a
                    .iter()
                    .zip(&hs[k - 1])
                    .enumerate()
                    .map(|(u, (g, &h))| g * rescale_slope(h, prev.unit_fan_in(u)))
                    .collect();
            }
        }
        y
    }

    /// `½·mean((y - t)²)` and its exact gradient over a batch of normalized
    /// inputs. Work is split into fixed-size chunks reduced in order, so the
    /// result does not depend on the thread count.
    pub fn loss_and_gradients(&self, inputs: &[&[f64]], targets: &[f64]) -> Result<(f64, Gradients)> {
        if inputs.len() != targets.len() {
            return Err(QuirkError::Shape {
                what: "batch targets",
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(QuirkError::invalid("empty batch"));
        }
        if let Some(row) = inputs.iter().find(|r| r.len() != self.input_dim()) {
            return Err(QuirkError::Shape {
                what: "network input",
                expected: self.input_dim(),
                got: row.len(),
            });
        }
        let weight = 1.0 / inputs.len() as f64;
        let partials: Vec<(f64, Gradients)> = inputs
            .par_chunks(GRAD_CHUNK)
            .zip(targets.par_chunks(GRAD_CHUNK))
            .map(|(xs, ts)| {
                let mut g = self.zero_gradients();
                let mut sq = 0.0;
                for (x, &t) in xs.iter().zip(ts) {
                    let y = self.accumulate_sample(x, t, weight, &mut g);
                    sq += (y - t) * (y - t);
                }
                (sq, g)
            })
            .collect();
        let mut total = self.zero_gradients();
        let mut sq = 0.0;
        for (s, g) in partials {
            sq += s;
            add_into(&mut total, &g);
        }
        Ok((0.5 * sq * weight, total))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_toml()?;
        std::fs::write(path, text).map_err(|e| QuirkError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| QuirkError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            QuirkError::Parse { message, .. } => QuirkError::parse(path, message),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        let file = ModelFile::from_model(self);
        toml::to_string(&file).map_err(|e| QuirkError::invalid(format!("cannot serialize model: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| QuirkError::parse("<model>", e.to_string()))?;
        match table.get("format_version") {
            Some(toml::Value::Integer(v)) if SUPPORTED_FORMAT_VERSIONS.contains(v) => {}
            Some(toml::Value::Integer(v)) => {
                return Err(QuirkError::Version {
                    found: *v,
                    expected: SUPPORTED_FORMAT_VERSIONS.to_vec(),
                })
            }
            Some(other) => {
                return Err(QuirkError::parse(
                    "<model>",
                    format!("field 'format_version' must be an integer, got {other}"),
                ))
            }
            None => return Err(QuirkError::parse("<model>", "missing field 'format_version'")),
        }
        let file: ModelFile =
            toml::from_str(text).map_err(|e| QuirkError::parse("<model>", e.to_string()))?;
        file.into_model()
    }
}

fn add_into(total: &mut Gradients, g: &Gradients) {
    for (tl, gl) in total.edges.iter_mut().zip(&g.edges) {
        for (te, ge) in tl.iter_mut().zip(gl) {
            for (t, v) in te.iter_mut().zip(ge) {
                *t += v;
            }
        }
    }
    for (t, v) in total.dense_w.iter_mut().zip(&g.dense_w) {
        *t += v;
    }
    total.dense_b += g.dense_b;
}

struct EdgeShape<'a> {
    template: &'a GateTemplate,
    dr_layers: usize,
    qubits: usize,
    entangle: bool,
}

// ---------------------------------------------------------------------------
// Model file (TOML, versioned)

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: i64,
    /// One `[min, max]` pair per input feature; omitted when unfitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_norm: Option<Vec<[f64; 2]>>,
    spec: SpecFile,
    dense: DenseFile,
    edges: Vec<EdgeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    input_dim: usize,
    dense_head: bool,
    rescale_bias: bool,
    template: String,
    readout_qubit: usize,
    seed: u64,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseFile {
    w: Vec<f64>,
    b: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeFile {
    layer: usize,
    input: usize,
    unit: usize,
    active: bool,
    thetas: Vec<f64>,
}

impl ModelFile {
    fn from_model(m: &Model) -> Self {
        let mut edges = Vec::new();
        for (k, layer) in m.layers.iter().enumerate() {
            for i in 0..layer.spec.fan_in {
                for u in 0..layer.spec.units {
                    let e = layer.edge(i, u);
                    edges.push(EdgeFile {
                        layer: k,
                        input: i,
                        unit: u,
                        active: e.active,
                        thetas: e.params.thetas().to_vec(),
                    });
                }
            }
        }
        ModelFile {
            format_version: FORMAT_VERSION,
            input_norm: m
                .input_norm
                .as_ref()
                .map(|v| v.iter().map(|r| [r.min, r.max]).collect()),
            spec: SpecFile {
                input_dim: m.spec.input_dim,
                dense_head: m.spec.dense_head,
                rescale_bias: m.spec.rescale_bias,
                template: m.spec.template.to_string(),
                readout_qubit: 0,
                seed: m.spec.seed,
                layers: m.spec.layers.clone(),
            },
            dense: DenseFile {
                w: m.dense_w.clone(),
                b: m.dense_b,
            },
            edges,
        }
    }

    fn into_model(self) -> Result<Model> {
        let bad = |msg: String| QuirkError::parse("<model>", msg);
        if self.spec.readout_qubit != 0 {
            return Err(bad(format!(
                "field 'spec.readout_qubit': only qubit 0 is supported, got {}",
                self.spec.readout_qubit
            )));
        }
        let template: GateTemplate = self
            .spec
            .template
            .parse()
            .map_err(|e| bad(format!("field 'spec.template': {e}")))?;
        let spec = NetworkSpec {
            input_dim: self.spec.input_dim,
            layers: self.spec.layers,
            dense_head: self.spec.dense_head,
            rescale_bias: self.spec.rescale_bias,
            template,
            seed: self.spec.seed,
        };
        spec.validate().map_err(|e| bad(format!("section 'spec': {e}")))?;
        let mut model = Model::zeroed(spec)?;
        let expected_edges: usize = model.layers.iter().map(|l| l.edges.len()).sum();
        if self.edges.len() != expected_edges {
            return Err(bad(format!(
                "expected {expected_edges} [[edges]] entries, found {}",
                self.edges.len()
            )));
        }
        for (n, ef) in self.edges.into_iter().enumerate() {
            let layer = model
                .layers
                .get_mut(ef.layer)
                .ok_or_else(|| bad(format!("edges[{n}]: layer {} does not exist", ef.layer)))?;
            if ef.input >= layer.spec.fan_in || ef.unit >= layer.spec.units {
                return Err(bad(format!(
                    "edges[{n}]: ({}, {}) outside layer {} shape {}x{}",
                    ef.input, ef.unit, ef.layer, layer.spec.fan_in, layer.spec.units
                )));
            }
            let idx = layer.edge_index(ef.input, ef.unit);
            let e = &mut layer.edges[idx];
            e.params
                .set_thetas(&ef.thetas)
                .map_err(|err| bad(format!("edges[{n}].thetas: {err}")))?;
            e.active = ef.active;
        }
        if self.dense.w.len() != model.dense_w.len() {
            return Err(bad(format!(
                "field 'dense.w': expected {} weights, found {}",
                model.dense_w.len(),
                self.dense.w.len()
            )));
        }
        model.dense_w = self.dense.w;
        model.dense_b = self.dense.b;
        if let Some(norm) = self.input_norm {
            let ranges = norm.iter().map(|p| FeatureRange { min: p[0], max: p[1] }).collect();
            model
                .set_input_norm(ranges)
                .map_err(|e| bad(format!("field 'input_norm': {e}")))?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn unit_norm(n: usize) -> Vec<FeatureRange> {
        vec![FeatureRange { min: 0.0, max: PI }; n]
    }

    fn zero_model(input_dim: usize, widths: &[usize], depth: usize) -> Model {
        let spec = NetworkSpec::from_widths(input_dim, widths, &[depth]).unwrap();
        let mut m = Model::zeroed(spec).unwrap();
        m.set_input_norm(unit_norm(input_dim)).unwrap();
        m
    }

    #[test]
    fn zero_layer_sums_cosines() {
        let m = zero_model(2, &[3, 1], 1);
        assert_eq!(m.layers[0].forward(&[0.0, 0.0]).unwrap(), vec![2.0; 3]);
        let h = m.layers[0].forward(&[0.0, PI]).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(
            m.layers[0].forward(&[0.0]),
            Err(QuirkError::Shape { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn random_layer_equals_sum_of_edges() {
        let spec = NetworkSpec::from_widths(3, &[2, 1], &[2]).unwrap().with_seed(11);
        let m = Model::new(spec).unwrap();
        let x = [0.3, 1.7, 2.9];
        let h = layer_forward(&x, &m.layers[0]).unwrap();
        for (u, hu) in h.iter().enumerate() {
            let oracle: f64 = (0..3)
                .map(|i| dr::dr_forward(x[i], &m.layers[0].edge(i, u).params).unwrap())
                .sum();
            assert!((hu - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn rescale_endpoints() {
        for fan_in in [1, 2, 5] {
            let i = fan_in as f64;
            assert!((rescale_value(i, fan_in, false) - PI).abs() < 1e-15);
            assert_eq!(rescale_value(-i, fan_in, false), 0.0);
            assert!((rescale_value(0.0, fan_in, false) - PI / 2.0).abs() < 1e-15);
            // Out-of-range sums are clamped.
            assert!((rescale_value(3.0 * i, fan_in, false) - PI).abs() < 1e-15);
        }
        assert_eq!(rescale(&[0.0, 2.0], 2, true), vec![0.0, PI / 2.0]);
    }

    #[test]
    fn degenerate_network_is_cosine() {
        let m = zero_model(1, &[1], 1);
        for x in [0.0, 0.5, 2.0, PI] {
            assert!((m.forward(&[x]).unwrap() - x.cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn two_layer_hand_trace() {
        let m = zero_model(2, &[2, 1], 1);
        let t = m.trace(&[0.0, 0.0]).unwrap();
        assert_eq!(t.unit_outputs[0], vec![2.0, 2.0]);
        assert_eq!(t.layer_inputs[1], vec![PI, PI]);
        assert!((t.unit_outputs[1][0] + 2.0).abs() < 1e-15);
        assert!((t.output + 2.0).abs() < 1e-15);
    }

    #[test]
    fn forward_errors() {
        let spec = NetworkSpec::from_widths(2, &[1], &[1]).unwrap();
        let m = Model::zeroed(spec).unwrap();
        assert!(matches!(m.forward(&[0.0, 0.0]), Err(QuirkError::State(_))));
        let m = zero_model(2, &[1], 1);
        assert!(matches!(m.forward(&[0.0]), Err(QuirkError::Shape { .. })));
    }

    #[test]
    fn input_norm_maps_and_clamps() {
        let spec = NetworkSpec::from_widths(2, &[1], &[1]).unwrap();
        let mut m = Model::zeroed(spec).unwrap();
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        m.fit_input_norm(rows.iter().map(|r| r.as_slice())).unwrap();
        let n = m.normalize_input(&[2.0, 5.0]).unwrap();
        assert!((n[0] - PI / 2.0).abs() < 1e-15);
        assert!((n[1] - PI / 2.0).abs() < 1e-15);
        assert_eq!(m.normalize_input(&[10.0, 0.0]).unwrap(), vec![PI, 0.0]);
        assert!(m
            .set_input_norm(vec![FeatureRange { min: 1.0, max: 1.0 }; 2])
            .is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::from_widths(2, &[2], &[1]).is_err());
        assert!(NetworkSpec::from_widths(2, &[2], &[1]).is_err());
        assert!(NetworkSpec::from_widths(2, &[2, 1], &[1, 2, 3]).is_err());
        assert!(NetworkSpec::from_widths(0, &[1], &[1]).is_err());
        let mut s = NetworkSpec::from_widths(2, &[2, 1], &[1]).unwrap();
        s.layers[1].fan_in = 3;
        assert!(s.validate().is_err());
        let s = NetworkSpec::from_widths(2, &[2, 1], &[1]).unwrap().with_qubits(6, true);
        assert!(matches!(s.validate(), Err(QuirkError::Capacity { .. })));
    }

    #[test]
    fn parameter_counts() {
        let m = zero_model(2, &[2, 1], 3);
        assert_eq!(m.param_count(), 36);
        assert_eq!(m.flat_params().len(), 36);
        let m = zero_model(1, &[1], 1);
        assert_eq!(m.param_count(), 2);
        let spec = NetworkSpec::from_widths(1, &[1], &[1]).unwrap().with_dense_head(true);
        assert_eq!(Model::zeroed(spec).unwrap().param_count(), 4);
        let spec = NetworkSpec::from_widths(2, &[2, 1], &[2]).unwrap().with_qubits(3, true);
        assert_eq!(Model::zeroed(spec).unwrap().param_count(), 6 * 2 * 2 * 3);
    }

    #[test]
    fn flat_params_round_trip() {
        let spec = NetworkSpec::from_widths(2, &[2, 1], &[2]).unwrap().with_dense_head(true).with_seed(4);
        let mut m = Model::new(spec).unwrap();
        let mut p = m.flat_params();
        p.iter_mut().for_each(|v| *v += 0.25);
        m.set_flat_params(&p).unwrap();
        assert_eq!(m.flat_params(), p);
        p[0] = f64::NAN;
        assert!(m.set_flat_params(&p).is_err());
        assert!(m.set_flat_params(&p[1..]).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let spec = NetworkSpec::from_widths(2, &[2, 1], &[2]).unwrap().with_seed(8);
        let m = Model::new(spec).unwrap();
        let xs: Vec<Vec<f64>> = vec![vec![0.2, 1.5], vec![2.2, 0.7]];
        let ys: Vec<f64> = xs.iter().map(|x| m.forward_normalized(x)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (loss, g) = m.loss_and_gradients(&refs, &ys).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_edge_gradient_is_scaled_circuit_gradient() {
        let spec = NetworkSpec::from_widths(1, &[1], &[3]).unwrap().with_seed(2);
        let m = Model::new(spec).unwrap();
        let x = 1.3;
        let target = 0.25;
        let (_, g) = m.loss_and_gradients(&[&[x]], &[target]).unwrap();
        let dg = dr::dr_gradient(x, &m.layers[0].edges[0].params).unwrap();
        let r = dg.value - target;
        for (a, b) in g.edges[0][0].iter().zip(&dg.dthetas) {
            assert!((a - r * b).abs() < 1e-14);
        }
    }

    /// Central differences on the loss, independent of the backward pass.
    fn finite_difference(m: &Model, xs: &[&[f64]], ys: &[f64], h: f64) -> Vec<f64> {
        let loss = |p: &[f64]| {
            let mut mm = m.clone();
            mm.set_flat_params(p).unwrap();
            let s: f64 = xs
                .iter()
                .zip(ys)
                .map(|(x, y)| (mm.forward_normalized(x) - y).powi(2))
                .sum();
            0.5 * s / xs.len() as f64
        };
        let p0 = m.flat_params();
        (0..p0.len())
            .map(|k| {
                let mut a = p0.clone();
                let mut b = p0.clone();
                a[k] += h;
                b[k] -= h;
                (loss(&a) - loss(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (widths, depth, dense) in [(vec![2, 1], 2, false), (vec![2, 2, 1], 3, true), (vec![3, 3, 1], 2, false)] {
            let spec = NetworkSpec::from_widths(2, &widths, &[depth])
                .unwrap()
                .with_dense_head(dense)
                .with_seed(rng.gen());
            let m = Model::new(spec).unwrap();
            let xs: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.gen_range(0.0..PI), rng.gen_range(0.0..PI)]).collect();
            let ys: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
            let (_, g) = m.loss_and_gradients(&refs, &ys).unwrap();
            let fd = finite_difference(&m, &refs, &ys, 1e-4);
            for (k, (a, b)) in g.flatten().iter().zip(&fd).enumerate() {
                let scale = b.abs().max(1e-3);
                assert!((a - b).abs() / scale < 1e-5, "param {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_through_pruned_and_multiqubit_edges() {
        let spec = NetworkSpec::from_widths(2, &[2, 1], &[2])
            .unwrap()
            .with_qubits(2, true)
            .with_seed(31);
        let mut m = Model::new(spec).unwrap();
        m.layers[0].edges[1].active = false;
        let xs: Vec<Vec<f64>> = vec![vec![0.4, 2.0], vec![1.9, 0.1], vec![3.0, 1.0]];
        let ys = [0.1, -0.3, 0.5];
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (_, g) = m.loss_and_gradients(&refs, &ys).unwrap();
        let fd = finite_difference(&m, &refs, &ys, 1e-4);
        assert_eq!(g.flatten().len(), m.param_count());
        for (a, b) in g.flatten().iter().zip(&fd) {
            assert!((a - b).abs() / b.abs().max(1e-3) < 1e-5);
        }
    }

    #[test]
    fn gradient_independent_of_thread_count() {
        let spec = NetworkSpec::from_widths(2, &[2, 1], &[2]).unwrap().with_seed(12);
        let m = Model::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.gen_range(0.0..PI), rng.gen_range(0.0..PI)]).collect();
        let ys: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| m.loss_and_gradients(&refs, &ys).unwrap())
        };
        let (l1, g1) = run(1);
        let (l4, g4) = run(4);
        assert_eq!(l1.to_bits(), l4.to_bits());
        assert_eq!(g1, g4);
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let spec = NetworkSpec::from_widths(3, &[2, 1], &[2, 3]).unwrap().with_dense_head(true).with_seed(77);
        let mut m = Model::new(spec).unwrap();
        m.set_input_norm(vec![
            FeatureRange { min: -1.0 / 3.0, max: 2.0f64.sqrt() },
            FeatureRange { min: 1e-300, max: 1e300 },
            FeatureRange { min: -0.0, max: 0.1 },
        ])
        .unwrap();
        m.dense_b = -0.1 - 0.2;
        m.layers[0].edges[3].active = false;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.toml");
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.flat_params()), bits(m.flat_params()));
        assert_eq!(back, m);
        let x = [0.3, 5.0, 0.05];
        assert_eq!(back.forward(&x).unwrap().to_bits(), m.forward(&x).unwrap().to_bits());
    }

    #[test]
    fn truncated_model_file_is_a_parse_error() {
        let spec = NetworkSpec::from_widths(2, &[2, 1], &[2]).unwrap();
        let text = Model::new(spec).unwrap().to_toml().unwrap();
        let cut = &text[..text.len() * 2 / 3];
        match Model::from_toml(cut) {
            Err(QuirkError::Parse { message, .. }) => assert!(!message.is_empty()),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(Model::from_toml(""), Err(QuirkError::Parse { .. })));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let spec = NetworkSpec::from_widths(1, &[1], &[1]).unwrap();
        let text = Model::new(spec).unwrap().to_toml().unwrap();
        let bumped = text.replace("format_version = 1", "format_version = 7");
        match Model::from_toml(&bumped) {
            Err(QuirkError::Version { found: 7, expected }) => assert_eq!(expected, vec![1]),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_field_names_its_location() {
        let spec = NetworkSpec::from_widths(1, &[1], &[1]).unwrap();
        let text = Model::new(spec).unwrap().to_toml().unwrap();
        let broken = text.replace("dense_head = false", "dense_head = \"nope\"");
        match Model::from_toml(&broken) {
            Err(QuirkError::Parse { message, .. }) => {
                assert!(message.contains("line") || message.contains("dense_head"), "{message}")
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
