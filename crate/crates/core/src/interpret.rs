//! Polynomial read-out of trained edges.
//!
//! Every active edge is sampled on a grid over `[0, π]` and fitted with the
//! lowest-degree polynomial that reaches a target R². Polynomials are written
//! in `t = 2x/π - 1 ∈ [-1, 1]`, the circuit input mapped onto the unit
//! interval. With the unbiased rescale map, the `t` seen by the next layer is
//! simply the unit sum divided by its fan-in, so the whole network becomes a
//! composition of polynomials and those divisions.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::dr;
use crate::error::{QuirkError, Result};
use crate::network::{rescale_value, Model};
use crate::train::rmse;

pub const DEFAULT_GRID: usize = 257;
pub const DEFAULT_MAX_DEGREE: usize = 6;
pub const DEFAULT_R2_TARGET: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId {
    pub layer: usize,
    pub input: usize,
    pub unit: usize,
}

impl std::fmt::Display for EdgeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}[{}->{}]", self.layer, self.input, self.unit)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFunctionSample {
    pub edge: EdgeId,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// Evaluates one edge's circuit alone on `grid_size` uniform points of `[0, π]`.
pub fn sample_edge(model: &Model, edge: EdgeId, grid_size: usize) -> Result<EdgeFunctionSample> {
    let known = || active_edges(model).iter().map(EdgeId::to_string).collect();
    let layer = model.layers.get(edge.layer).ok_or_else(|| QuirkError::Lookup {
        what: "edge",
        name: edge.to_string(),
        known: known(),
    })?;
    if edge.input >= layer.spec.fan_in || edge.unit >= layer.spec.units || !layer.edge(edge.input, edge.unit).active {
        return Err(QuirkError::Lookup {
            what: "edge",
            name: edge.to_string(),
            known: known(),
        });
    }
    if grid_size < 2 {
        return Err(QuirkError::invalid("grid_size must be at least 2"));
    }
    let xs: Vec<f64> = (0..grid_size)
        .map(|k| if k + 1 == grid_size { PI } else { PI * k as f64 / (grid_size - 1) as f64 })
        .collect();
    let ys = dr::dr_forward_batch(&xs, &layer.edge(edge.input, edge.unit).params)?;
    Ok(EdgeFunctionSample { edge, xs, ys })
}

/// Active edges in layer, input, unit order.
pub fn active_edges(model: &Model) -> Vec<EdgeId> {
    let mut out = Vec::new();
    for (k, layer) in model.layers.iter().enumerate() {
        for i in 0..layer.spec.fan_in {
            for u in 0..layer.spec.units {
                if layer.edge(i, u).active {
                    out.push(EdgeId { layer: k, input: i, unit: u });
                }
            }
        }
    }
    out
}

#[inline]
pub fn to_unit(x: f64) -> f64 {
    2.0 * x / PI - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    /// Monomial coefficients in `t = 2x/π - 1`, ascending degree.
    pub coefficients: Vec<f64>,
    pub degree: usize,
    pub r_squared: f64,
}

impl PolyFit {
    /// Value at circuit input `x ∈ [0, π]`.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_unit(to_unit(x))
    }

    pub fn eval_unit(&self, t: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    /// Human-readable polynomial in `var`.
    pub fn format(&self, var: &str) -> String {
        let mut s = String::new();
        for (k, &c) in self.coefficients.iter().enumerate() {
            if k > 0 && c.abs() < 5e-5 {
                continue;
            }
            let sign = if c < 0.0 { "-" } else { "+" };
            if s.is_empty() {
                if c < 0.0 {
                    s.push('-');
                }
            } else {
                let _ = write!(s, " {sign} ");
            }
            let _ = write!(s, "{:.4}", c.abs());
            match k {
                0 => {}
                1 => {
                    let _ = write!(s, "·{var}");
                }
                _ => {
                    let _ = write!(s, "·{var}^{k}");
                }
            }
        }
        s
    }
}

fn chebyshev_row(t: f64, degree: usize, row: &mut [f64]) {
    row[0] = 1.0;
    if degree >= 1 {
        row[1] = t;
    }
    for k in 2..=degree {
        row[k] = 2.0 * t * row[k - 1] - row[k - 2];
    }
}

/// Monomial coefficients of `Σ c_k T_k(t)`.
fn chebyshev_to_monomial(cheb: &[f64]) -> Vec<f64> {
    let n = cheb.len();
    let mut out = vec![0.0; n];
    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    for (k, &c) in cheb.iter().enumerate() {
        let next = match k {
            0 => {
                let mut t0 = vec![0.0; n];
                t0[0] = 1.0;
                t0
            }
            1 => {
                let mut t1 = vec![0.0; n];
                t1[1] = 1.0;
                t1
            }
            _ => {
                let mut t = vec![0.0; n];
                for j in 0..n - 1 {
                    t[j + 1] += 2.0 * cur[j];
                }
                for j in 0..n {
                    t[j] -= prev[j];
                }
                t
            }
        };
        for (o, v) in out.iter_mut().zip(&next) {
            *o += c * v;
        }
        prev = std::mem::replace(&mut cur, next);
    }
    out
}

fn fit_degree(ts: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    let m = degree + 1;
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    let mut row = vec![0.0; m];
    for (&t, &y) in ts.iter().zip(ys) {
        chebyshev_row(t, degree, &mut row);
        for i in 0..m {
            rhs[i] += row[i] * y;
            for j in 0..m {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    let sol = gram
        .cholesky()
        .ok_or_else(|| QuirkError::invalid(format!("degree {degree} fit is singular on this grid")))?
        .solve(&rhs);
    Ok(chebyshev_to_monomial(sol.as_slice()))
}

fn r_squared(ts: &[f64], ys: &[f64], coefficients: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = ts
        .iter()
        .zip(ys)
        .map(|(&t, y)| {
            let p = coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c);
            (y - p) * (y - p)
        })
        .sum();
    if ss_tot <= f64::EPSILON * n * (1.0 + mean * mean) {
        // Constant data: any fit that reproduces it is perfect.
        return if ss_res <= 1e-20 * n { 1.0 } else { 0.0 };
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

/// Least-squares polynomial of the smallest degree reaching `r2_target`,
/// or the `max_degree` fit when none does.
pub fn fit_poly(sample: &EdgeFunctionSample, max_degree: usize, r2_target: f64) -> Result<PolyFit> {
    if sample.xs.len() != sample.ys.len() {
        return Err(QuirkError::Shape {
            what: "edge sample",
            expected: sample.xs.len(),
            got: sample.ys.len(),
        });
    }
    if sample.xs.len() < max_degree + 1 {
        return Err(QuirkError::invalid(format!(
            "{} points cannot determine a degree-{max_degree} polynomial",
            sample.xs.len()
        )));
    }
    let mut distinct = sample.xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(QuirkError::invalid("degenerate grid: all sample points coincide"));
    }
    let ts: Vec<f64> = sample.xs.iter().map(|&x| to_unit(x)).collect();
    let mut last = None;
    for d in 0..=max_degree.min(distinct.len() - 1) {
        let coefficients = fit_degree(&ts, &sample.ys, d)?;
        let r2 = r_squared(&ts, &sample.ys, &coefficients);
        let fit = PolyFit {
            coefficients,
            degree: d,
            r_squared: r2,
        };
        if r2 >= r2_target {
            return Ok(fit);
        }
        last = Some(fit);
    }
    Ok(last.expect("at least degree 0 is fitted"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretConfig {
    pub grid_size: usize,
    pub max_degree: usize,
    pub r2_target: f64,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig {
            grid_size: DEFAULT_GRID,
            max_degree: DEFAULT_MAX_DEGREE,
            r2_target: DEFAULT_R2_TARGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeReport {
    pub edge: EdgeId,
    pub fit: PolyFit,
    pub sample: EdgeFunctionSample,
}

/// The model with every edge replaced by its polynomial.
#[derive(Debug, Clone)]
pub struct Surrogate {
    model: Model,
    /// `fits[layer][edge_index]`, `None` for inactive edges.
    fits: Vec<Vec<Option<PolyFit>>>,
}

impl Surrogate {
    pub fn new(model: &Model, edges: &[(EdgeId, PolyFit)]) -> Result<Self> {
        let mut fits: Vec<Vec<Option<PolyFit>>> = model.layers.iter().map(|l| vec![None; l.edges.len()]).collect();
        for (id, fit) in edges {
            let layer = model.layers.get(id.layer).ok_or_else(|| QuirkError::Index {
                what: "layers",
                index: id.layer,
                len: model.layers.len(),
            })?;
            if id.input >= layer.spec.fan_in || id.unit >= layer.spec.units {
                return Err(QuirkError::invalid(format!("edge {id} does not exist")));
            }
            fits[id.layer][layer.edge_index(id.input, id.unit)] = Some(fit.clone());
        }
        for id in active_edges(model) {
            if fits[id.layer][model.layers[id.layer].edge_index(id.input, id.unit)].is_none() {
                return Err(QuirkError::invalid(format!("no polynomial for active edge {id}")));
            }
        }
        Ok(Surrogate {
            model: model.clone(),
            fits,
        })
    }

    pub fn forward(&self, raw: &[f64]) -> Result<f64> {
        let mut a = self.model.normalize_input(raw)?;
        let n = self.model.layers.len();
        for (k, layer) in self.model.layers.iter().enumerate() {
            let mut h = vec![0.0; layer.spec.units];
            for (i, &x) in a.iter().enumerate() {
                let x = x.clamp(0.0, PI);
                for (u, slot) in h.iter_mut().enumerate() {
                    if let Some(p) = &self.fits[k][layer.edge_index(i, u)] {
                        *slot += p.eval(x);
                    }
                }
            }
            if k + 1 == n {
                return Ok(self.model.head(&h));
            }
            a = h
                .iter()
                .enumerate()
                .map(|(u, &v)| rescale_value(v, layer.unit_fan_in(u), self.model.spec.rescale_bias))
                .collect();
        }
        unreachable!("validated models have at least one layer")
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub edges: Vec<EdgeReport>,
    /// Surrogate vs model on the test rows.
    pub surrogate_rmse: f64,
    /// Model vs targets on the test rows.
    pub model_rmse: f64,
    /// Surrogate vs targets on the test rows.
    pub surrogate_target_rmse: f64,
    pub summary: String,
    pub surrogate: Surrogate,
}

pub fn report(model: &Model, dataset: &Dataset, config: &InterpretConfig) -> Result<Report> {
    if model.input_dim() != dataset.n_features() {
        return Err(QuirkError::Shape {
            what: "dataset features",
            expected: model.input_dim(),
            got: dataset.n_features(),
        });
    }
    let mut edges = Vec::new();
    for id in active_edges(model) {
        let sample = sample_edge(model, id, config.grid_size)?;
        let fit = fit_poly(&sample, config.max_degree, config.r2_target)?;
        edges.push(EdgeReport { edge: id, fit, sample });
    }
    let pairs: Vec<(EdgeId, PolyFit)> = edges.iter().map(|e| (e.edge, e.fit.clone())).collect();
    let surrogate = Surrogate::new(model, &pairs)?;

    let idx = if dataset.test_indices().is_empty() {
        (0..dataset.len()).collect()
    } else {
        dataset.test_indices().to_vec()
    };
    let model_out: Vec<f64> = dataset.rows_at(&idx).map(|r| model.forward(r)).collect::<Result<_>>()?;
    let sur_out: Vec<f64> = dataset.rows_at(&idx).map(|r| surrogate.forward(r)).collect::<Result<_>>()?;
    let targets = dataset.targets_at(&idx);
    let surrogate_rmse = rmse(&sur_out, &model_out)?;
    let model_rmse = rmse(&model_out, &targets)?;
    let surrogate_target_rmse = rmse(&sur_out, &targets)?;

    let summary = summarize(model, dataset, &edges);
    Ok(Report {
        edges,
        surrogate_rmse,
        model_rmse,
        surrogate_target_rmse,
        summary,
        surrogate,
    })
}

fn summarize(model: &Model, dataset: &Dataset, edges: &[EdgeReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "input map (t = 2x̂/π - 1, x̂ the circuit input):");
    if let Some(norm) = &model.input_norm {
        for (i, r) in norm.iter().enumerate() {
            let name = dataset.columns.get(i).map(String::as_str).unwrap_or("?");
            let _ = writeln!(
                s,
                "  t{i} = 2·({name} - {:.6})/{:.6} - 1   (clamped to [-1, 1])",
                r.min,
                r.max - r.min
            );
        }
    }
    let n = model.layers.len();
    let shift = if model.spec.rescale_bias { " - 1" } else { "" };
    for (k, layer) in model.layers.iter().enumerate() {
        let _ = writeln!(s, "layer {k}:");
        for u in 0..layer.spec.units {
            let terms: Vec<String> = edges
                .iter()
                .filter(|e| e.edge.layer == k && e.edge.unit == u)
                .map(|e| {
                    let var = if k == 0 { format!("t{}", e.edge.input) } else { format!("t{k}_{}", e.edge.input) };
                    format!("({})", e.fit.format(&var))
                })
                .collect();
            let lhs = if k + 1 == n { format!("y{u}") } else { format!("h{k}_{u}") };
            if terms.is_empty() {
                let _ = writeln!(s, "  {lhs} = 0   (unit pruned)");
                continue;
            }
            let _ = writeln!(s, "  {lhs} = {}", terms.join(" + "));
            if k + 1 < n {
                let _ = writeln!(
                    s,
                    "  t{}_{u} = {lhs}/{}{shift}   (clamped to [-1, 1])",
                    k + 1,
                    layer.unit_fan_in(u)
                );
            }
        }
    }
    if model.spec.dense_head {
        let terms: Vec<String> = model
            .dense_w
            .iter()
            .enumerate()
            .map(|(u, w)| format!("{w:.6}·y{u}"))
            .collect();
        let _ = writeln!(s, "output = {} + {:.6}", terms.join(" + "), model.dense_b);
    } else {
        let _ = writeln!(s, "output = y0");
    }
    let _ = writeln!(s, "edge fits:");
    for e in edges {
        let _ = writeln!(s, "  {}  degree {}  R² {:.6}", e.edge, e.fit.degree, e.fit.r_squared);
    }
    s
}

impl Report {
    pub fn text(&self) -> String {
        let mut s = self.summary.clone();
        let _ = writeln!(s, "model test rmse: {:.6e}", self.model_rmse);
        let _ = writeln!(s, "surrogate vs model rmse: {:.6e}", self.surrogate_rmse);
        let _ = writeln!(s, "surrogate test rmse: {:.6e}", self.surrogate_target_rmse);
        s
    }

    /// `layer,input,unit,degree,r_squared,c0..cN` with monomial coefficients in `t`.
    pub fn write_coefficients_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let width = self.edges.iter().map(|e| e.fit.coefficients.len()).max().unwrap_or(1);
        let err = |e: csv::Error| QuirkError::parse(path, e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header: Vec<String> = ["layer", "input", "unit", "degree", "r_squared"].map(String::from).to_vec();
        header.extend((0..width).map(|k| format!("c{k}")));
        w.write_record(&header).map_err(err)?;
        for e in &self.edges {
            let mut rec = vec![
                e.edge.layer.to_string(),
                e.edge.input.to_string(),
                e.edge.unit.to_string(),
                e.fit.degree.to_string(),
                format!("{:?}", e.fit.r_squared),
            ];
            rec.extend((0..width).map(|k| format!("{:?}", e.fit.coefficients.get(k).copied().unwrap_or(0.0))));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| QuirkError::io(path, e))
    }
}

/// Reads a coefficient CSV written by [`Report::write_coefficients_csv`].
pub fn read_coefficients_csv(path: impl AsRef<Path>) -> Result<Vec<(EdgeId, PolyFit)>> {
    let table = crate::data::read_table(path.as_ref())?;
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| QuirkError::parse(path.as_ref(), format!("missing column '{name}'")))
    };
    let (cl, ci, cu, cd, cr) = (col("layer")?, col("input")?, col("unit")?, col("degree")?, col("r_squared")?);
    let mut out = Vec::new();
    for r in 0..table.rows.len() {
        let as_idx = |c| table.number(r, c).map(|v| v as usize);
        let degree = as_idx(cd)?;
        let mut coefficients = Vec::with_capacity(degree + 1);
        for k in 0..=degree {
            coefficients.push(table.number(r, col(&format!("c{k}"))?)?);
        }
        out.push((
            EdgeId {
                layer: as_idx(cl)?,
                input: as_idx(ci)?,
                unit: as_idx(cu)?,
            },
            PolyFit {
                coefficients,
                degree,
                r_squared: table.number(r, cr)?,
            },
        ));
    }
    Ok(out)
}
