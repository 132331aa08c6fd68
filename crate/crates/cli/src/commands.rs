use std::path::{Path, PathBuf};

use rayon::prelude::*;

use quirk::bspline;
use quirk::data::{self, Dataset, Table};
use quirk::interpret;
use quirk::network::{Model, NetworkSpec};
use quirk::plot::{Plot, Series};
use quirk::train::{self, TrainConfig};

use crate::config::{DatasetSection, RunConfig};
use crate::Failure;

const REFERENCE_CSV: &str = include_str!("../data/table1_reference.csv");

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output.dir.join(name)
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn write(table: &Table, path: &Path) -> Result<(), Failure> {
    data::write_table(table, path).map_err(|e| Failure::io(e.to_string()))
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    Model::load(path).map_err(|e| Failure::io(e.to_string()))
}

fn check_dims(model: &Model, ds: &Dataset) -> Result<(), Failure> {
    if model.input_dim() != ds.n_features() {
        return Err(Failure::config(format!(
            "model expects {} input features but the dataset has {}",
            model.input_dim(),
            ds.n_features()
        )));
    }
    Ok(())
}

pub fn list_equations() {
    for eq in data::equations() {
        let vars: Vec<String> = eq
            .variables
            .iter()
            .map(|v| format!("{}∈[{}, {}]", v.name, v.lo, v.hi))
            .collect();
        println!("{:<10} {} = {}   {}", eq.id, eq.output, eq.formula, vars.join(" "));
    }
}

struct TrainedRun {
    model: Model,
    history: train::TrainHistory,
    test_rmse: f64,
}

fn train_on(ds: &Dataset, spec: NetworkSpec, tc: &TrainConfig) -> Result<TrainedRun, Failure> {
    let (model, history) = train::train(ds, spec, tc)?;
    let test_rmse = train::evaluate(&model, ds, ds.test_indices())?;
    Ok(TrainedRun { model, history, test_rmse })
}

pub fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let dsec = cfg.dataset()?;
    let ds = dsec.build()?;
    let spec = cfg.network()?.spec(ds.n_features())?;
    let tc = cfg.train_config()?;
    let run = train_on(&ds, spec, &tc)?;

    run.model.save(out_path(cfg, "model.toml"))?;
    run.history.write_csv(out_path(cfg, "history.csv"))?;
    let summary = Table {
        header: ["equation", "params", "test_rmse", "best_val_rmse", "best_step"].map(String::from).to_vec(),
        rows: vec![vec![
            dsec.label(),
            run.model.param_count().to_string(),
            fmt(run.test_rmse),
            fmt(run.history.best_val_rmse),
            run.history.best_step.to_string(),
        ]],
    };
    write(&summary, &out_path(cfg, "summary.csv"))?;
    println!(
        "{} params={} test_rmse={:.6e}",
        dsec.label(),
        run.model.param_count(),
        run.test_rmse
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, model_path: &Path) -> Result<(), Failure> {
    let model = load_model(model_path)?;
    let ds = cfg.dataset()?.build()?;
    check_dims(&model, &ds)?;
    let mut rows = Vec::new();
    for (name, idx) in [
        ("train", ds.split.train.as_slice()),
        ("val", ds.val_indices()),
        ("test", ds.test_indices()),
    ] {
        if idx.is_empty() {
            continue;
        }
        let r = train::evaluate(&model, &ds, idx)?;
        println!("{name:<5} rmse={r:.6e} n={}", idx.len());
        rows.push(vec![name.to_string(), fmt(r), idx.len().to_string()]);
    }
    let t = Table {
        header: ["split", "rmse", "n"].map(String::from).to_vec(),
        rows,
    };
    write(&t, &out_path(cfg, "eval.csv"))
}

pub fn prune(cfg: &RunConfig, model_path: &Path) -> Result<(), Failure> {
    let model = load_model(model_path)?;
    let dsec = cfg.dataset()?;
    let ds = dsec.build()?;
    check_dims(&model, &ds)?;
    let tc = cfg.train_config()?;
    let before = train::evaluate(&model, &ds, ds.test_indices())?;
    let out = train::prune(&model, &ds, &tc)?;
    if let Some(w) = &out.warning {
        eprintln!("warning: {w}");
    }
    let after = train::evaluate(&out.model, &ds, ds.test_indices())?;
    out.model.save(out_path(cfg, "pruned_model.toml"))?;
    if let Some(h) = &out.history {
        h.write_csv(out_path(cfg, "prune_history.csv"))?;
    }
    let t = Table {
        header: ["equation", "params", "test_rmse", "pruned_params", "pruned_test_rmse", "removed_edges"]
            .map(String::from)
            .to_vec(),
        rows: vec![vec![
            dsec.label(),
            model.param_count().to_string(),
            fmt(before),
            out.model.param_count().to_string(),
            fmt(after),
            out.removed_edges.to_string(),
        ]],
    };
    write(&t, &out_path(cfg, "prune_summary.csv"))?;
    println!(
        "{} params {} -> {} test_rmse {:.6e} -> {:.6e}",
        dsec.label(),
        model.param_count(),
        out.model.param_count(),
        before,
        after
    );
    Ok(())
}

pub fn interpret(cfg: &RunConfig, model_path: &Path) -> Result<(), Failure> {
    let model = load_model(model_path)?;
    let ds = cfg.dataset()?.build()?;
    check_dims(&model, &ds)?;
    let icfg = cfg.interpret_config()?;
    let rep = interpret::report(&model, &ds, &icfg)?;
    let text = rep.text();
    let p = out_path(cfg, "interpret.txt");
    std::fs::write(&p, &text).map_err(|e| Failure::io(format!("cannot write {}: {e}", p.display())))?;
    rep.write_coefficients_csv(out_path(cfg, "coefficients.csv"))?;
    if cfg.interpret.svg {
        let dir = out_path(cfg, "edges");
        std::fs::create_dir_all(&dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))?;
        for e in &rep.edges {
            let s = &e.sample;
            let fitted: Vec<(f64, f64)> = s.xs.iter().map(|&x| (x, e.fit.eval(x))).collect();
            let plot = Plot::new(format!("edge {}  degree {}  R² {:.4}", e.edge, e.fit.degree, e.fit.r_squared), "circuit input", "⟨Z⟩")
                .with(Series::points("circuit", s.xs.iter().copied().zip(s.ys.iter().copied()).collect()))
                .with(Series::line("polynomial", fitted));
            let name = format!("edge_l{}_i{}_u{}.svg", e.edge.layer, e.edge.input, e.edge.unit);
            plot.save(dir.join(name))?;
        }
    }
    print!("{text}");
    Ok(())
}

struct BenchRow {
    id: String,
    loss: f64,
    params: usize,
    pruned: Option<(f64, usize)>,
}

fn bench_one(id: &str, template: &DatasetSection, cfg: &RunConfig, tc: &TrainConfig, do_prune: bool) -> Result<BenchRow, Failure> {
    let dsec = DatasetSection {
        equation: Some(id.to_string()),
        csv: None,
        ..template.clone()
    };
    let ds = dsec.build()?;
    let spec = cfg.network()?.spec(ds.n_features())?;
    let run = train_on(&ds, spec, tc)?;
    let pruned = if do_prune {
        let out = train::prune(&run.model, &ds, tc)?;
        Some((train::evaluate(&out.model, &ds, ds.test_indices())?, out.model.param_count()))
    } else {
        None
    };
    Ok(BenchRow {
        id: id.to_string(),
        loss: run.test_rmse,
        params: run.model.param_count(),
        pruned,
    })
}

fn reference() -> Result<Table, Failure> {
    Ok(data::parse_table(REFERENCE_CSV.as_bytes(), Path::new("table1_reference.csv"))?)
}

pub fn benchmark(cfg: &RunConfig, equations: Option<Vec<String>>) -> Result<(), Failure> {
    let section = cfg.benchmark.clone();
    let ids = equations
        .or_else(|| section.as_ref().map(|b| b.equations.clone()))
        .unwrap_or_default();
    if ids.is_empty() {
        return Err(Failure::config(
            "no equations to benchmark: pass --equations or set [benchmark] equations",
        ));
    }
    let do_prune = section.as_ref().map_or(true, |b| b.prune);
    let with_reference = section.as_ref().is_some_and(|b| b.include_reference);
    let template = cfg.dataset.clone().unwrap_or(DatasetSection {
        equation: None,
        csv: None,
        samples: data::DEFAULT_SAMPLES,
        seed: 0,
        scale_targets: true,
    });
    cfg.network()?;
    let tc = cfg.train_config()?;

    let (known, unknown): (Vec<&String>, Vec<&String>) = ids.iter().partition(|id| data::lookup(id).is_ok());
    for id in &unknown {
        eprintln!("error: unknown equation '{id}'; skipped");
    }
    let results: Vec<Result<BenchRow, Failure>> = known
        .par_iter()
        .map(|id| bench_one(id, &template, cfg, &tc, do_prune))
        .collect();

    let reference = if with_reference { Some(reference()?) } else { None };
    let mut header: Vec<String> = ["equation", "loss", "params", "pruned_loss", "pruned_params"].map(String::from).to_vec();
    if reference.is_some() {
        header.extend(
            ["ref_kan_loss", "ref_kan_params", "ref_kan_pruned_loss", "ref_kan_pruned_params", "ref_source"]
                .map(String::from),
        );
    }
    let mut rows = Vec::new();
    let mut first_error = None;
    for r in results {
        let row = match r {
            Ok(row) => row,
            Err(f) => {
                eprintln!("error: {f}");
                first_error.get_or_insert(f);
                continue;
            }
        };
        let (pl, pp) = row
            .pruned
            .map(|(l, p)| (fmt(l), p.to_string()))
            .unwrap_or_else(|| (String::new(), String::new()));
        let mut rec = vec![row.id.clone(), fmt(row.loss), row.params.to_string(), pl, pp];
        if let Some(t) = &reference {
            let cols = ["kan_loss", "kan_params", "kan_pruned_loss", "kan_pruned_params", "source"];
            let hit = t.rows.iter().find(|r| r[0] == row.id);
            for c in cols {
                let idx = t.column(c).expect("bundled reference has every column");
                rec.push(hit.map(|r| r[idx].clone()).unwrap_or_default());
            }
        }
        println!("{}", rec.join(","));
        rows.push(rec);
    }
    write(&Table { header, rows }, &out_path(cfg, "benchmark.csv"))?;
    if let Some(f) = first_error {
        return Err(f);
    }
    if !unknown.is_empty() {
        return Err(Failure::config(format!(
            "unknown equation ids: {}",
            unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(())
}

pub fn compare_activations(cfg: &RunConfig, target: Option<String>, budgets: Option<Vec<usize>>) -> Result<(), Failure> {
    let mut section = cfg
        .compare
        .clone()
        .ok_or_else(|| Failure::config("missing required section [compare] (key `compare`)"))?;
    if let Some(t) = target {
        section.target = t;
    }
    if let Some(b) = budgets {
        section.budgets = b;
    }
    let target = section.validate()?;
    let tc = cfg.train_config()?;
    let mut ds = data::generate_univariate(target, section.samples, (section.range[0], section.range[1]), section.seed)?;
    ds.scale_targets();
    let train_idx = &ds.split.train;
    let xs: Vec<f64> = train_idx.iter().map(|&i| ds.row(i)[0]).collect();
    let ys = ds.targets_at(train_idx);
    let test = ds.test_indices();
    let test_y = ds.targets_at(test);
    let grid: Vec<f64> = (0..200)
        .map(|k| section.range[0] + (section.range[1] - section.range[0]) * k as f64 / 199.0)
        .collect();

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &budget in &section.budgets {
        let layers = budget / 2;
        if budget % 2 == 1 {
            log::warn!("budget {budget} is odd; the circuit uses {layers} layers ({} parameters)", 2 * layers);
            eprintln!("warning: odd budget {budget} rounded down to {}", 2 * layers);
        }
        if layers == 0 {
            return Err(Failure::config(format!("budget {budget} is too small for a circuit")));
        }
        let mut best: Option<(f64, Model)> = None;
        for r in 0..section.restarts {
            let spec = NetworkSpec::from_widths(1, &[1], &[layers])?.with_seed(section.seed.wrapping_add(r as u64));
            let (m, h) = train::train(&ds, spec, &tc)?;
            if best.as_ref().map_or(true, |(v, _)| h.best_val_rmse < *v) {
                best = Some((h.best_val_rmse, m));
            }
        }
        let (_, model) = best.expect("at least one restart");
        let dr_rmse = train::evaluate(&model, &ds, test)?;
        rows.push(vec![budget.to_string(), "dr".into(), String::new(), model.param_count().to_string(), fmt(dr_rmse)]);
        let mut plot = Plot::new(format!("{} — budget {budget}", target.name()), "x", "normalized target").with(Series::points(
            "test data",
            test.iter().map(|&i| ds.row(i)[0]).zip(test_y.iter().copied()).collect(),
        ));
        let dr_curve: Vec<(f64, f64)> = grid.iter().map(|&x| Ok((x, model.forward(&[x])?))).collect::<Result<_, quirk::QuirkError>>()?;
        for &(x, y) in &dr_curve {
            curves.push(vec![budget.to_string(), "dr".into(), String::new(), fmt(x), fmt(y)]);
        }
        plot = plot.with(Series::line(format!("DR ({} params)", model.param_count()), dr_curve));

        for &s in &section.smoothness {
            let spline = bspline::fit(&xs, &ys, budget, s)?;
            let pred: Vec<f64> = test.iter().map(|&i| spline.eval(ds.row(i)[0])).collect();
            let r = train::rmse(&pred, &test_y)?;
            rows.push(vec![budget.to_string(), "bspline".into(), fmt(s), spline.param_count().to_string(), fmt(r)]);
            let curve: Vec<(f64, f64)> = grid.iter().map(|&x| (x, spline.eval(x))).collect();
            for &(x, y) in &curve {
                curves.push(vec![budget.to_string(), "bspline".into(), fmt(s), fmt(x), fmt(y)]);
            }
            plot = plot.with(Series::line(format!("B-spline S={s}"), curve));
        }
        plot.save(out_path(cfg, &format!("compare_{budget}.svg")))?;
    }
    for r in &rows {
        println!("{}", r.join(","));
    }
    write(
        &Table {
            header: ["budget", "model", "smoothness", "params", "test_rmse"].map(String::from).to_vec(),
            rows,
        },
        &out_path(cfg, "compare.csv"),
    )?;
    write(
        &Table {
            header: ["budget", "model", "smoothness", "x", "y"].map(String::from).to_vec(),
            rows: curves,
        },
        &out_path(cfg, "compare_curves.csv"),
    )
}
