//! Datasets: the Feynman-equation registry, univariate comparison targets and
//! CSV input/output.
//!
//! All sampling uses `ChaCha8Rng` seeded with the caller's `u64`, so generated
//! datasets are identical across platforms. Variables are drawn uniformly and
//! independently over their declared ranges, in declaration order, one row at
//! a time; the train/validation/test split is a seeded shuffle drawn from the
//! same stream afterwards.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QuirkError, Result};

pub const DEFAULT_SAMPLES: usize = 3000;
/// Train / validation fractions; the remainder is the test split.
pub const SPLIT_FRACTIONS: (f64, f64) = (0.70, 0.15);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variable {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

const fn var(name: &'static str, lo: f64, hi: f64) -> Variable {
    Variable { name, lo, hi }
}

/// A closed-form benchmark target.
#[derive(Clone, Copy)]
pub struct EquationDef {
    pub id: &'static str,
    pub output: &'static str,
    pub formula: &'static str,
    pub variables: &'static [Variable],
    pub eval: fn(&[f64]) -> f64,
}

impl std::fmt::Debug for EquationDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EquationDef")
            .field("id", &self.id)
            .field("formula", &self.formula)
            .field("variables", &self.variables)
            .finish()
    }
}

impl EquationDef {
    pub fn arity(&self) -> usize {
        self.variables.len()
    }

    pub fn evaluate(&self, args: &[f64]) -> Result<f64> {
        if args.len() != self.arity() {
            return Err(QuirkError::Shape {
                what: "equation arguments",
                expected: self.arity(),
                got: args.len(),
            });
        }
        Ok((self.eval)(args))
    }
}

fn sinc_sq(a: f64) -> f64 {
    if a.abs() < 1e-8 {
        1.0
    } else {
        (a.sin() / a).powi(2)
    }
}

/// Feynman equations used by the benchmark. Formulas and ranges follow the
/// public Feynman symbolic-regression table; variables are listed in that
/// table's order.
pub static FEYNMAN: &[EquationDef] = &[
    EquationDef {
        id: "I.6.2",
        output: "f",
        formula: "exp(-(theta/sigma)^2/2)/(sqrt(2*pi)*sigma)",
        variables: &[var("sigma", 1.0, 3.0), var("theta", 1.0, 3.0)],
        eval: |v| (-(v[1] / v[0]).powi(2) / 2.0).exp() / ((2.0 * PI).sqrt() * v[0]),
    },
    EquationDef {
        id: "I.6.2b",
        output: "f",
        formula: "exp(-((theta-theta1)/sigma)^2/2)/(sqrt(2*pi)*sigma)",
        variables: &[var("sigma", 1.0, 3.0), var("theta", 1.0, 3.0), var("theta1", 1.0, 3.0)],
        eval: |v| (-((v[1] - v[2]) / v[0]).powi(2) / 2.0).exp() / ((2.0 * PI).sqrt() * v[0]),
    },
    EquationDef {
        id: "I.9.18",
        output: "F",
        formula: "G*m1*m2/((x2-x1)^2+(y2-y1)^2+(z2-z1)^2)",
        variables: &[
            var("m1", 1.0, 2.0),
            var("m2", 1.0, 2.0),
            var("G", 1.0, 2.0),
            var("x1", 3.0, 4.0),
            var("x2", 1.0, 2.0),
            var("y1", 3.0, 4.0),
            var("y2", 1.0, 2.0),
            var("z1", 3.0, 4.0),
            var("z2", 1.0, 2.0),
        ],
        eval: |v| {
            v[2] * v[0] * v[1]
                / ((v[4] - v[3]).powi(2) + (v[6] - v[5]).powi(2) + (v[8] - v[7]).powi(2))
        },
    },
    EquationDef {
        id: "I.12.11",
        output: "F",
        formula: "q*(Ef+B*v*sin(theta))",
        variables: &[
            var("q", 1.0, 5.0),
            var("Ef", 1.0, 5.0),
            var("B", 1.0, 5.0),
            var("v", 1.0, 5.0),
            var("theta", 1.0, 5.0),
        ],
        eval: |v| v[0] * (v[1] + v[2] * v[3] * v[4].sin()),
    },
    EquationDef {
        id: "I.13.12",
        output: "U",
        formula: "G*m1*m2*(1/r2-1/r1)",
        variables: &[
            var("m1", 1.0, 5.0),
            var("m2", 1.0, 5.0),
            var("r1", 1.0, 5.0),
            var("r2", 1.0, 5.0),
            var("G", 1.0, 5.0),
        ],
        eval: |v| v[4] * v[0] * v[1] * (1.0 / v[3] - 1.0 / v[2]),
    },
    EquationDef {
        id: "I.15.3x",
        output: "x1",
        formula: "(x-u*t)/sqrt(1-u^2/c^2)",
        variables: &[
            var("x", 5.0, 10.0),
            var("u", 1.0, 2.0),
            var("c", 3.0, 20.0),
            var("t", 1.0, 2.0),
        ],
        eval: |v| (v[0] - v[1] * v[3]) / (1.0 - v[1] * v[1] / (v[2] * v[2])).sqrt(),
    },
    EquationDef {
        id: "I.16.6",
        output: "v1",
        formula: "(u+v)/(1+u*v/c^2)",
        variables: &[var("c", 1.0, 5.0), var("v", 1.0, 5.0), var("u", 1.0, 5.0)],
        eval: |v| (v[2] + v[1]) / (1.0 + v[2] * v[1] / (v[0] * v[0])),
    },
    EquationDef {
        id: "I.18.4",
        output: "r",
        formula: "(m1*r1+m2*r2)/(m1+m2)",
        variables: &[
            var("m1", 1.0, 5.0),
            var("m2", 1.0, 5.0),
            var("r1", 1.0, 5.0),
            var("r2", 1.0, 5.0),
        ],
        eval: |v| (v[0] * v[2] + v[1] * v[3]) / (v[0] + v[1]),
    },
    EquationDef {
        id: "I.26.2",
        output: "theta1",
        formula: "arcsin(n*sin(theta2))",
        variables: &[var("n", 0.0, 1.0), var("theta2", 1.0, 5.0)],
        eval: |v| (v[0] * v[1].sin()).asin(),
    },
    EquationDef {
        id: "I.27.6",
        output: "foc",
        formula: "1/(1/d1+n/d2)",
        variables: &[var("d1", 1.0, 5.0), var("d2", 1.0, 5.0), var("n", 1.0, 5.0)],
        eval: |v| 1.0 / (1.0 / v[0] + v[2] / v[1]),
    },
    EquationDef {
        id: "I.29.16",
        output: "x",
        formula: "sqrt(x1^2+x2^2-2*x1*x2*cos(theta1-theta2))",
        variables: &[
            var("x1", 1.0, 5.0),
            var("x2", 1.0, 5.0),
            var("theta1", 1.0, 5.0),
            var("theta2", 1.0, 5.0),
        ],
        eval: |v| (v[0] * v[0] + v[1] * v[1] - 2.0 * v[0] * v[1] * (v[2] - v[3]).cos()).max(0.0).sqrt(),
    },
    EquationDef {
        id: "I.30.3",
        output: "Int",
        formula: "Int_0*sin(n*theta/2)^2/sin(theta/2)^2",
        variables: &[var("Int_0", 1.0, 5.0), var("theta", 1.0, 5.0), var("n", 1.0, 5.0)],
        eval: |v| v[0] * (v[2] * v[1] / 2.0).sin().powi(2) / (v[1] / 2.0).sin().powi(2),
    },
    EquationDef {
        id: "I.30.5",
        output: "theta",
        formula: "arcsin(lambd/(n*d))",
        variables: &[var("lambd", 1.0, 2.0), var("d", 2.0, 5.0), var("n", 1.0, 5.0)],
        eval: |v| (v[0] / (v[2] * v[1])).asin(),
    },
    EquationDef {
        id: "I.37.4",
        output: "Int",
        formula: "I1+I2+2*sqrt(I1*I2)*cos(delta)",
        variables: &[var("I1", 1.0, 5.0), var("I2", 1.0, 5.0), var("delta", 1.0, 5.0)],
        eval: |v| v[0] + v[1] + 2.0 * (v[0] * v[1]).sqrt() * v[2].cos(),
    },
    EquationDef {
        id: "I.40.1",
        output: "n",
        formula: "n_0*exp(-m*g*x/(kb*T))",
        variables: &[
            var("n_0", 1.0, 5.0),
            var("m", 1.0, 5.0),
            var("x", 1.0, 5.0),
            var("T", 1.0, 5.0),
            var("g", 1.0, 5.0),
            var("kb", 1.0, 5.0),
        ],
        eval: |v| v[0] * (-v[1] * v[4] * v[2] / (v[5] * v[3])).exp(),
    },
    EquationDef {
        id: "I.44.4",
        output: "E",
        formula: "n*kb*T*ln(V2/V1)",
        variables: &[
            var("n", 1.0, 5.0),
            var("kb", 1.0, 5.0),
            var("T", 1.0, 5.0),
            var("V1", 1.0, 5.0),
            var("V2", 1.0, 5.0),
        ],
        eval: |v| v[0] * v[1] * v[2] * (v[4] / v[3]).ln(),
    },
    EquationDef {
        id: "I.50.26",
        output: "x",
        formula: "x1*(cos(omega*t)+alpha*cos(omega*t)^2)",
        variables: &[
            var("x1", 1.0, 3.0),
            var("omega", 1.0, 3.0),
            var("t", 1.0, 3.0),
            var("alpha", 1.0, 3.0),
        ],
        eval: |v| {
            let c = (v[1] * v[2]).cos();
            v[0] * (c + v[3] * c * c)
        },
    },
    EquationDef {
        id: "II.2.42",
        output: "Pwr",
        formula: "kappa*(T2-T1)*A/d",
        variables: &[
            var("kappa", 1.0, 5.0),
            var("T1", 1.0, 5.0),
            var("T2", 1.0, 5.0),
            var("A", 1.0, 5.0),
            var("d", 1.0, 5.0),
        ],
        eval: |v| v[0] * (v[2] - v[1]) * v[3] / v[4],
    },
    EquationDef {
        id: "II.6.15a",
        output: "Ef",
        formula: "p_d/(4*pi*epsilon)*3*z/r^5*sqrt(x^2+y^2)",
        variables: &[
            var("epsilon", 1.0, 3.0),
            var("p_d", 1.0, 3.0),
            var("r", 1.0, 3.0),
            var("x", 1.0, 3.0),
            var("y", 1.0, 3.0),
            var("z", 1.0, 3.0),
        ],
        eval: |v| v[1] / (4.0 * PI * v[0]) * 3.0 * v[5] / v[2].powi(5) * (v[3] * v[3] + v[4] * v[4]).sqrt(),
    },
    EquationDef {
        id: "II.11.7",
        output: "n",
        formula: "n_0*(1+p_d*Ef*cos(theta)/(kb*T))",
        variables: &[
            var("n_0", 1.0, 3.0),
            var("kb", 1.0, 3.0),
            var("T", 1.0, 3.0),
            var("theta", 1.0, 3.0),
            var("p_d", 1.0, 3.0),
            var("Ef", 1.0, 3.0),
        ],
        eval: |v| v[0] * (1.0 + v[4] * v[5] * v[3].cos() / (v[1] * v[2])),
    },
    EquationDef {
        id: "II.11.27",
        output: "Pol",
        formula: "n*alpha/(1-(n*alpha/3))*epsilon*Ef",
        variables: &[
            var("n", 0.0, 1.0),
            var("alpha", 0.0, 1.0),
            var("epsilon", 1.0, 2.0),
            var("Ef", 1.0, 2.0),
        ],
        eval: |v| v[0] * v[1] / (1.0 - v[0] * v[1] / 3.0) * v[2] * v[3],
    },
    EquationDef {
        id: "II.35.18",
        output: "n",
        formula: "n_0/(exp(mom*B/(kb*T))+exp(-mom*B/(kb*T)))",
        variables: &[
            var("n_0", 1.0, 3.0),
            var("kb", 1.0, 3.0),
            var("T", 1.0, 3.0),
            var("mom", 1.0, 3.0),
            var("B", 1.0, 3.0),
        ],
        eval: |v| {
            let a = v[3] * v[4] / (v[1] * v[2]);
            v[0] / (a.exp() + (-a).exp())
        },
    },
    EquationDef {
        id: "II.36.38",
        output: "f",
        formula: "mom*H/(kb*T)+(mom*alpha)/(epsilon*c^2*kb*T)*M",
        variables: &[
            var("mom", 1.0, 3.0),
            var("H", 1.0, 3.0),
            var("kb", 1.0, 3.0),
            var("T", 1.0, 3.0),
            var("alpha", 1.0, 3.0),
            var("epsilon", 1.0, 3.0),
            var("c", 1.0, 3.0),
            var("M", 1.0, 3.0),
        ],
        eval: |v| v[0] * v[1] / (v[2] * v[3]) + v[0] * v[4] / (v[5] * v[6] * v[6] * v[2] * v[3]) * v[7],
    },
    EquationDef {
        id: "II.38.3",
        output: "F",
        formula: "Y*A*x/d",
        variables: &[
            var("Y", 1.0, 5.0),
            var("A", 1.0, 5.0),
            var("d", 1.0, 5.0),
            var("x", 1.0, 5.0),
        ],
        eval: |v| v[0] * v[1] * v[3] / v[2],
    },
    EquationDef {
        id: "III.9.52",
        output: "prob",
        formula: "(p_d*Ef*t/(h/(2*pi)))*sin((omega-omega_0)*t/2)^2/((omega-omega_0)*t/2)^2",
        variables: &[
            var("p_d", 1.0, 3.0),
            var("Ef", 1.0, 3.0),
            var("t", 1.0, 3.0),
            var("h", 1.0, 3.0),
            var("omega", 1.0, 5.0),
            var("omega_0", 1.0, 5.0),
        ],
        eval: |v| v[0] * v[1] * v[2] / (v[3] / (2.0 * PI)) * sinc_sq((v[4] - v[5]) * v[2] / 2.0),
    },
    EquationDef {
        id: "III.10.19",
        output: "E",
        formula: "mom*sqrt(Bx^2+By^2+Bz^2)",
        variables: &[
            var("mom", 1.0, 5.0),
            var("Bx", 1.0, 5.0),
            var("By", 1.0, 5.0),
            var("Bz", 1.0, 5.0),
        ],
        eval: |v| v[0] * (v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt(),
    },
    EquationDef {
        id: "III.17.37",
        output: "f",
        formula: "beta*(1+alpha*cos(theta))",
        variables: &[var("beta", 1.0, 5.0), var("alpha", 1.0, 5.0), var("theta", 1.0, 5.0)],
        eval: |v| v[0] * (1.0 + v[1] * v[2].cos()),
    },
];

/// Two-variable demonstration target for the interpretability pass.
pub static X2_MINUS_Y2: EquationDef = EquationDef {
    id: "x2-y2",
    output: "f",
    formula: "x^2 - y^2",
    variables: &[var("x", -1.0, 1.0), var("y", -1.0, 1.0)],
    eval: |v| v[0] * v[0] - v[1] * v[1],
};

/// The five equations of the headline comparison table.
pub const TABLE1_IDS: &[&str] = &["I.6.2", "I.15.3x", "I.26.2", "III.9.52", "I.44.4"];

/// All registered equations: the Feynman subset plus `x2-y2`.
pub fn equations() -> impl Iterator<Item = &'static EquationDef> {
    FEYNMAN.iter().chain(std::iter::once(&X2_MINUS_Y2))
}

pub fn lookup(id: &str) -> Result<&'static EquationDef> {
    equations().find(|e| e.id == id).ok_or_else(|| QuirkError::Lookup {
        what: "equation",
        name: id.to_string(),
        known: equations().map(|e| e.id.to_string()).collect(),
    })
}

/// Index sets of the three splits; disjoint and jointly covering `0..N`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded 70/15/15 shuffle. Tiny datasets put every row in train and
    /// reuse it for validation so training can still select a model.
    pub fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_train = ((n as f64) * SPLIT_FRACTIONS.0).round() as usize;
        let n_val = ((n as f64) * SPLIT_FRACTIONS.1).round() as usize;
        if n < 3 || n_train == 0 || n_val == 0 {
            return Split {
                train: idx,
                val: Vec::new(),
                test: Vec::new(),
            };
        }
        let test = idx.split_off((n_train + n_val).min(n));
        let val = idx.split_off(n_train);
        Split { train: idx, val, test }
    }
}

/// Affine map of targets onto `[-1, 1]` fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScale {
    pub lo: f64,
    pub hi: f64,
}

impl TargetScale {
    pub fn apply(&self, y: f64) -> f64 {
        2.0 * (y - self.lo) / (self.hi - self.lo) - 1.0
    }

    pub fn invert(&self, z: f64) -> f64 {
        (z + 1.0) / 2.0 * (self.hi - self.lo) + self.lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub columns: Vec<String>,
    pub target_name: String,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    n_features: usize,
    pub split: Split,
    pub seed: u64,
    pub target_scale: Option<TargetScale>,
}

impl Dataset {
    /// Builds a dataset from row-major inputs; all values must be finite.
    pub fn new(
        name: impl Into<String>,
        columns: Vec<String>,
        target_name: impl Into<String>,
        inputs: Vec<f64>,
        targets: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let n_features = columns.len();
        if n_features == 0 {
            return Err(QuirkError::invalid("dataset needs at least one input column"));
        }
        if targets.is_empty() {
            return Err(QuirkError::invalid("dataset needs at least one row"));
        }
        if inputs.len() != targets.len() * n_features {
            return Err(QuirkError::Shape {
                what: "dataset inputs",
                expected: targets.len() * n_features,
                got: inputs.len(),
            });
        }
        if let Some(i) = inputs.iter().chain(&targets).position(|v| !v.is_finite()) {
            return Err(QuirkError::invalid(format!("dataset value {i} is not finite")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let split = Split::shuffled(targets.len(), &mut rng);
        Ok(Dataset {
            name: name.into(),
            columns,
            target_name: target_name.into(),
            inputs,
            targets,
            n_features,
            split,
            seed,
            target_scale: None,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks_exact(self.n_features)
    }

    pub fn rows_at<'a>(&'a self, idx: &'a [usize]) -> impl Iterator<Item = &'a [f64]> + 'a {
        idx.iter().map(move |&i| self.row(i))
    }

    pub fn targets_at(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.targets[i]).collect()
    }

    /// Validation indices, falling back to train when the split is empty.
    pub fn val_indices(&self) -> &[usize] {
        if self.split.val.is_empty() {
            &self.split.train
        } else {
            &self.split.val
        }
    }

    /// Test indices, falling back to validation then train.
    pub fn test_indices(&self) -> &[usize] {
        if self.split.test.is_empty() {
            self.val_indices()
        } else {
            &self.split.test
        }
    }

    /// Rescales targets so the training split spans `[-1, 1]`. Idempotent:
    /// a second call keeps the first map.
    pub fn scale_targets(&mut self) -> TargetScale {
        if let Some(s) = self.target_scale {
            return s;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &self.split.train {
            lo = lo.min(self.targets[i]);
            hi = hi.max(self.targets[i]);
        }
        if lo >= hi {
            lo -= 1.0;
            hi += 1.0;
        }
        let s = TargetScale { lo, hi };
        self.targets.iter_mut().for_each(|y| *y = s.apply(*y));
        self.target_scale = Some(s);
        s
    }
}

/// Samples `n_samples` rows of a registered equation.
pub fn generate(equation_id: &str, n_samples: usize, seed: u64) -> Result<Dataset> {
    generate_from(lookup(equation_id)?, n_samples, seed)
}

pub fn generate_from(eq: &EquationDef, n_samples: usize, seed: u64) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(QuirkError::invalid("n_samples must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = eq.arity();
    let mut inputs = Vec::with_capacity(n_samples * n);
    let mut targets = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let start = inputs.len();
        for v in eq.variables {
            inputs.push(rng.gen_range(v.lo..=v.hi));
        }
        targets.push((eq.eval)(&inputs[start..]));
    }
    let split = Split::shuffled(n_samples, &mut rng);
    let mut ds = Dataset::new(
        eq.id,
        eq.variables.iter().map(|v| v.name.to_string()).collect(),
        eq.output,
        inputs,
        targets,
        seed,
    )?;
    ds.split = split;
    Ok(ds)
}

/// Univariate targets for the activation comparison.
#[derive(Debug, Clone, Copy)]
pub enum Univariate {
    /// `(e^{sin x} · x³ + x²) / 15000`
    Fig4,
    Sin,
    Custom(fn(f64) -> f64),
}

impl Univariate {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Univariate::Fig4 => ((x.sin()).exp() * x.powi(3) + x * x) / 15000.0,
            Univariate::Sin => x.sin(),
            Univariate::Custom(f) => f(x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Univariate::Fig4 => "fig4",
            Univariate::Sin => "sin",
            Univariate::Custom(_) => "custom",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "fig4" => Ok(Univariate::Fig4),
            "sin" => Ok(Univariate::Sin),
            other => Err(QuirkError::Lookup {
                what: "univariate target",
                name: other.to_string(),
                known: vec!["fig4".into(), "sin".into()],
            }),
        }
    }
}

/// Uniform samples of a univariate target over `[lo, hi]`.
pub fn generate_univariate(target: Univariate, n_samples: usize, range: (f64, f64), seed: u64) -> Result<Dataset> {
    let (lo, hi) = range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(QuirkError::invalid(format!("empty or invalid range [{lo}, {hi}]")));
    }
    if n_samples == 0 {
        return Err(QuirkError::invalid("n_samples must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n_samples).map(|_| rng.gen_range(lo..=hi)).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| target.eval(x)).collect();
    let split = Split::shuffled(n_samples, &mut rng);
    let mut ds = Dataset::new(target.name(), vec!["x".into()], "y", xs, ys, seed)?;
    ds.split = split;
    Ok(ds)
}

/// A CSV file read as strings: one header row plus equal-length records.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parses cell `(row, col)` as a float, naming the location on failure.
    pub fn number(&self, row: usize, col: usize) -> Result<f64> {
        let cell = &self.rows[row][col];
        cell.trim().parse().map_err(|_| {
            QuirkError::invalid(format!(
                "row {}: column '{}' value '{cell}' is not a number",
                row + 2,
                self.header[col]
            ))
        })
    }
}

/// Reads any CSV with a header; ragged records are rejected with their row.
pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| QuirkError::io(path, e))?;
    parse_table(file, path)
}

/// [`read_table`] over any reader; `origin` names the source in errors.
pub fn parse_table<R: std::io::Read>(reader: R, origin: &Path) -> Result<Table> {
    let path = origin;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = reader.records();
    let header: Vec<String> = match records.next() {
        Some(rec) => rec
            .map_err(|e| QuirkError::parse(path, e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect(),
        None => return Err(QuirkError::parse(path, "file is empty; expected a header row")),
    };
    let mut rows = Vec::new();
    for (k, rec) in records.enumerate() {
        let row_no = k + 2;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => QuirkError::parse(
                path,
                format!("row {row_no}: expected {expected_len} fields, found {len}"),
            ),
            _ => QuirkError::parse(path, format!("row {row_no}: {e}")),
        })?;
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    Ok(Table { header, rows })
}

/// Writes a header and string records.
pub fn write_table(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| QuirkError::parse(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(&table.header).map_err(err)?;
    for (k, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            return Err(QuirkError::parse(
                path,
                format!("row {}: expected {} fields, found {}", k + 2, table.header.len(), row.len()),
            ));
        }
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| QuirkError::io(path, e))
}

/// Loads `x1,…,xn,y` data: every column but the last is an input.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    load_csv_with_seed(path, 0)
}

pub fn load_csv_with_seed(path: impl AsRef<Path>, seed: u64) -> Result<Dataset> {
    let path = path.as_ref();
    let table = read_table(path)?;
    if table.header.len() < 2 {
        return Err(QuirkError::parse(path, "need at least one input column and a target column"));
    }
    if table.header.iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(QuirkError::parse(path, "missing header row (first row is numeric)"));
    }
    if table.rows.is_empty() {
        return Err(QuirkError::parse(path, "no data rows"));
    }
    let n = table.header.len() - 1;
    let mut inputs = Vec::with_capacity(table.rows.len() * n);
    let mut targets = Vec::with_capacity(table.rows.len());
    for r in 0..table.rows.len() {
        for c in 0..=n {
            let v = table.number(r, c).map_err(|e| QuirkError::parse(path, e.to_string()))?;
            if c < n {
                inputs.push(v);
            } else {
                targets.push(v);
            }
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::new(name, table.header[..n].to_vec(), table.header[n].clone(), inputs, targets, seed)
        .map_err(|e| QuirkError::parse(path, e.to_string()))
}

/// Writes the header and every row; floats use the shortest representation
/// that parses back to the same value.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| QuirkError::parse(path, e.to_string()))?;
    let header: Vec<&str> = ds
        .columns
        .iter()
        .map(String::as_str)
        .chain(std::iter::once(ds.target_name.as_str()))
        .collect();
    let io = |e: csv::Error| QuirkError::parse(path, e.to_string());
    w.write_record(&header).map_err(io)?;
    for (row, y) in ds.rows().zip(ds.targets()) {
        let rec: Vec<String> = row.iter().chain(std::iter::once(y)).map(|v| format!("{v:?}")).collect();
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| QuirkError::io(path, e))
}
