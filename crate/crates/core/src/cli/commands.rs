use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{
    BandwidthArg, Command, ExperimentArgs, FitArgs, PolicyArgs, PredictArgs, SamplerArgs, SearchBandwidthArgs,
    SearchLagArgs, SimulateArgs, EXIT_NUMERIC, EXIT_OK,
};
use crate::artifact::{schema_hash, ModelArtifact};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::longitudinal::{load_csv, save_csv, Layout};
use crate::numeric::quantile_sorted;
use crate::regression::{
    bandwidth_search, fit_async, lag_search, AsyncFit, BandwidthGrid, BandwidthPolicy, LagPolicy, MethodVariant,
    RegressionSpec,
};
use crate::report::{
    experiment_box_plot, write_bandwidth_report_csv, write_experiment_csv, write_lag_report_csv, write_predictions_csv,
};
use crate::sampler::TreeMode;
use crate::simulation::{generate_dataset, run_experiment, CovariateMode, MethodSetup, SimConfig};

/// Inclusion grid used by `--bandwidth search` without an explicit grid.
pub const DEFAULT_INCLUSION_GRID: [f64; 4] = [0.10, 0.134, 0.167, 0.20];

pub(super) fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::SearchBandwidth(a) => search_bandwidth(a),
        Command::SearchLag(a) => search_lag(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn covariate_mode(s: &str) -> Result<CovariateMode> {
    match s {
        "gp" => Ok(CovariateMode::Gp),
        "gp-sine" => Ok(CovariateMode::GpSine),
        _ => Err(Error::InvalidInput(format!(
            "covariate must be gp or gp-sine, got {s:?}"
        ))),
    }
}

fn apply_sampler(spec: &mut RegressionSpec, s: &SamplerArgs) {
    let c = &mut spec.sampler;
    if let Some(v) = s.trees {
        c.trees = v;
    }
    if let Some(v) = s.iterations {
        c.iterations = v;
    }
    if let Some(v) = s.burn_in {
        c.burn_in = v;
    }
    if let Some(v) = s.thin {
        c.thin = v;
    }
    c.seed = s.seed;
    if let Some(v) = s.hard_trees {
        spec.hard_trees = v;
    }
    let cv = &mut spec.search;
    if let Some(v) = s.folds {
        cv.folds = v;
    }
    if let Some(v) = s.pool_fraction {
        cv.pool_fraction = v;
    }
    if let Some(v) = s.groups {
        cv.groups = v;
    }
    if let Some(v) = s.cv_iterations {
        cv.iterations = v;
    }
    if let Some(v) = s.cv_burn_in {
        cv.burn_in = v;
    }
    if s.cv_trees.is_some() {
        cv.trees = s.cv_trees;
    }
}

fn search_grid(p: &PolicyArgs) -> Result<BandwidthGrid> {
    match (&p.grid, &p.grid_h) {
        (Some(_), Some(_)) => Err(Error::invalid("give either --grid or --grid-h, not both")),
        (Some(g), None) => Ok(BandwidthGrid::Inclusion(g.0.clone())),
        (None, Some(g)) => Ok(BandwidthGrid::Absolute(g.0.clone())),
        (None, None) => Ok(BandwidthGrid::Inclusion(DEFAULT_INCLUSION_GRID.to_vec())),
    }
}

fn build_spec(variant: MethodVariant, policy: &PolicyArgs, sampler: &SamplerArgs) -> Result<RegressionSpec> {
    let mut spec = RegressionSpec::new(variant);
    apply_sampler(&mut spec, sampler);
    let has_grid = policy.grid.is_some() || policy.grid_h.is_some();
    spec.bandwidth = match policy.bandwidth {
        BandwidthArg::Search => BandwidthPolicy::Searched(search_grid(policy)?),
        _ if has_grid => return Err(Error::invalid("--grid/--grid-h need --bandwidth search")),
        BandwidthArg::Default => BandwidthPolicy::Default,
        BandwidthArg::Fixed(h) => BandwidthPolicy::Fixed(h),
        BandwidthArg::Inclusion(f) => BandwidthPolicy::Inclusion(f),
    };
    spec.lag = match (&policy.lag, &policy.lag_grid) {
        (Some(_), Some(_)) => return Err(Error::invalid("give either --lag or --lag-grid, not both")),
        (Some(l), None) => LagPolicy::Fixed(*l),
        (None, Some(g)) => LagPolicy::Searched(g.0.clone()),
        (None, None) => LagPolicy::None,
    };
    spec.validate()?;
    Ok(spec)
}

fn simulate(a: SimulateArgs) -> Result<i32> {
    let mut config = SimConfig::new(a.function, a.n, a.seed);
    config.covariate = covariate_mode(&a.covariate)?;
    config.intensity = a.intensity;
    config.train_fraction = a.train_fraction;
    if let Some(l) = a.lag {
        config.lag = l;
    }
    if let Some(b) = a.beta {
        config.beta = b;
    }
    let sim = generate_dataset(&config)?;
    fs::create_dir_all(&a.out)?;
    save_csv(&sim.train, a.out.join("train.csv"))?;

    let mut test = csv::Writer::from_path(a.out.join("test.csv"))?;
    test.write_record(["subject_id", "x1", "t", "s", "y"])?;
    let mut truth = csv::Writer::from_path(a.out.join("truth.csv"))?;
    truth.write_record(["subject_id", "t", "lag", "f_true"])?;
    for c in &sim.test {
        let s = c.t - config.lag;
        test.write_record([
            c.subject.clone(),
            c.x.to_string(),
            c.t.to_string(),
            s.to_string(),
            c.y.to_string(),
        ])?;
        truth.write_record([
            c.subject.clone(),
            c.t.to_string(),
            config.lag.to_string(),
            c.f_true.to_string(),
        ])?;
    }
    test.flush()?;
    truth.flush()?;
    println!(
        "simulated {} train subjects ({} responses) and {} test responses into {}",
        sim.train.len(),
        sim.train.total_responses(),
        sim.test.len(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn sigma_summary(fit: &AsyncFit) -> Value {
    let burn = fit.model.config.burn_in.min(fit.model.sigma_trace.len());
    let mut kept: Vec<f64> = fit.model.sigma_trace[burn..].to_vec();
    if kept.is_empty() {
        return Value::Null;
    }
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    kept.sort_by(f64::total_cmp);
    json!({
        "iterations": fit.model.sigma_trace.len(),
        "post_burn_in": kept.len(),
        "mean": finite(mean),
        "q05": finite(quantile_sorted(&kept, 0.05)),
        "q50": finite(quantile_sorted(&kept, 0.5)),
        "q95": finite(quantile_sorted(&kept, 0.95)),
    })
}

fn fit_report(fit: &AsyncFit, artifact: &ModelArtifact) -> Value {
    let cfg = &fit.model.config;
    let bandwidth_search = fit.bandwidth_report.as_ref().map(|r| {
        json!({
            "lag": r.lag,
            "grid": r.grid,
            "inclusion": r.inclusion,
            "statistics": r.statistics.iter().map(|&s| finite(s)).collect::<Vec<_>>(),
            "votes": r.votes,
            "chosen": r.chosen,
            "pool_size": r.pool.len(),
            "failures": r.failures,
        })
    });
    let lag_search = fit.lag_report.as_ref().map(|r| {
        json!({
            "grid": r.grid,
            "bandwidths": r.bandwidths,
            "statistics": r.statistics.iter().map(|&s| finite(s)).collect::<Vec<_>>(),
            "chosen": r.chosen,
        })
    });
    json!({
        "method": fit.spec.variant.tag(),
        "tree_mode": match cfg.mode { TreeMode::Soft => "soft", TreeMode::Hard => "hard" },
        "trees": cfg.trees,
        "iterations": cfg.iterations,
        "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "seed": cfg.seed,
        "retained_draws": fit.model.draws.len(),
        "design_size": fit.design_size,
        "lag": fit.lag,
        "bandwidth": fit.bandwidth,
        "inclusion_percent": fit.inclusion.map(|f| 100.0 * f),
        "feature_names": artifact.feature_names,
        "schema_hash": artifact.schema_hash(),
        "sigma": sigma_summary(fit),
        "bandwidth_search": bandwidth_search,
        "lag_search": lag_search,
    })
}

fn fit(a: FitArgs) -> Result<i32> {
    let data = load_csv(&a.data)?;
    let spec = build_spec(a.method, &a.policy, &a.sampler)?;
    let fit = fit_async(&data, &spec)?;
    let artifact = ModelArtifact::new(fit);
    artifact.save(&a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".json");
        PathBuf::from(p)
    });
    let report = fit_report(&artifact.fit, &artifact);
    let mut w = BufWriter::new(File::create(&report_path)?);
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| Error::invalid(format!("report: {e}")))?;
    writeln!(w)?;
    w.flush()?;
    let f = &artifact.fit;
    match f.bandwidth {
        Some(h) => println!(
            "{}: h = {h} ({:.2}% of pairs), lag = {}, {} design cases",
            f.spec.variant.tag(),
            100.0 * f.inclusion.unwrap_or(0.0),
            f.lag,
            f.design_size
        ),
        None => println!(
            "{}: lag = {}, {} design cases",
            f.spec.variant.tag(),
            f.lag,
            f.design_size
        ),
    }
    Ok(EXIT_OK)
}

/// Rows of model features from a query CSV. The double-trajectory `s`
/// column defaults to `t - lag` when absent.
fn query_rows(artifact: &ModelArtifact, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let names = &artifact.feature_names;
    let lag = artifact.fit.lag;
    let has_s = artifact.layout() == Layout::Double;
    let required = if has_s { &names[..names.len() - 1] } else { &names[..] };
    let present: Vec<String> = names.iter().filter(|n| col(n).is_some()).cloned().collect();
    let mut effective = present.clone();
    if has_s && !effective.iter().any(|n| n == "s") {
        effective.push("s".into());
    }
    if schema_hash(artifact.layout(), &effective) != artifact.schema_hash() {
        let missing: Vec<&String> = required.iter().filter(|n| col(n).is_none()).collect();
        return Err(Error::SchemaMismatch(format!("query columns lack {missing:?}")));
    }
    let idx: Vec<Option<usize>> = names.iter().map(|n| col(n)).collect();
    let t_col = col("t").expect("t is required");
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse = |i: usize| -> Result<f64> {
            let field = record.get(i).unwrap_or("");
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("bad number {field:?}"),
                })
        };
        let t = parse(t_col)?;
        let row = idx
            .iter()
            .map(|c| match c {
                Some(i) => parse(*i),
                None => Ok(t - lag),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn sweep_rows(artifact: &ModelArtifact, a: &PredictArgs, feature: &str) -> Result<Vec<Vec<f64>>> {
    let names = &artifact.feature_names;
    let k = names
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| Error::InvalidInput(format!("unknown sweep feature {feature:?}; model has {names:?}")))?;
    if a.points == 0 || !a.from.is_finite() || !a.to.is_finite() {
        return Err(Error::invalid("sweep needs finite bounds and at least one point"));
    }
    let mut fixed: Vec<Option<f64>> = vec![None; names.len()];
    if let Some(at) = &a.at {
        for part in at.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("expected name=value in --at, got {part:?}")))?;
            let j = names
                .iter()
                .position(|n| n == name.trim())
                .ok_or_else(|| Error::InvalidInput(format!("unknown feature {name:?} in --at")))?;
            let v: f64 = value
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::InvalidInput(format!("bad value in --at: {part:?}")))?;
            fixed[j] = Some(v);
        }
    }
    let layout = artifact.layout();
    let t_idx = names.iter().position(|n| n == "t").expect("t feature");
    let s_idx = (layout == Layout::Double).then(|| names.len() - 1);
    for (j, v) in fixed.iter().enumerate() {
        if j != k && v.is_none() && Some(j) != s_idx {
            return Err(Error::InvalidInput(format!("--at must fix {:?}", names[j])));
        }
    }
    let lag = artifact.fit.lag;
    let mut rows = Vec::with_capacity(a.points);
    for p in 0..a.points {
        let v = if a.points == 1 {
            a.from
        } else {
            a.from + (a.to - a.from) * p as f64 / (a.points - 1) as f64
        };
        let mut row: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
        row[k] = v;
        if let Some(s) = s_idx {
            if s != k && fixed[s].is_none() {
                row[s] = row[t_idx] - lag;
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn predict(a: PredictArgs) -> Result<i32> {
    let artifact = ModelArtifact::load(&a.model)?;
    let rows = match (&a.sweep, &a.queries) {
        (Some(f), None) => sweep_rows(&artifact, &a, f)?,
        (None, Some(q)) => query_rows(&artifact, q)?,
        _ => return Err(Error::invalid("give exactly one of --queries or --sweep")),
    };
    let x = FeatureMatrix::from_rows(artifact.feature_names.len(), &rows)?;
    let prediction = artifact.fit.model.predict(&x, &a.levels.0)?;
    let mut out = output(a.out.as_deref())?;
    write_predictions_csv(&artifact.feature_names, &rows, &prediction, &mut out)?;
    out.flush()?;
    Ok(EXIT_OK)
}

fn search_bandwidth(a: SearchBandwidthArgs) -> Result<i32> {
    if a.policy.lag_grid.is_some() {
        return Err(Error::invalid(
            "search-bandwidth takes a fixed --lag; use search-lag for lag grids",
        ));
    }
    if !a.method.method.uses_kernel() {
        return Err(Error::InvalidInput(format!("{} has no bandwidth", a.method.tag())));
    }
    let data = load_csv(&a.data)?;
    let grid = search_grid(&a.policy)?;
    let policy = PolicyArgs {
        bandwidth: BandwidthArg::Search,
        ..a.policy.clone()
    };
    let spec = build_spec(a.method, &policy, &a.sampler)?;
    let report = bandwidth_search(&data, &grid, &spec, a.policy.lag.unwrap_or(0.0))?;
    let mut out = output(a.out.as_deref())?;
    write_bandwidth_report_csv(&report, &mut out)?;
    out.flush()?;
    Ok(EXIT_OK)
}

fn search_lag(a: SearchLagArgs) -> Result<i32> {
    let Some(grid) = a.policy.lag_grid.clone() else {
        return Err(Error::invalid("search-lag needs --lag-grid"));
    };
    let data = load_csv(&a.data)?;
    let spec = build_spec(a.method, &a.policy, &a.sampler)?;
    let report = lag_search(&data, &grid.0, &spec)?;
    let mut out = output(a.out.as_deref())?;
    write_lag_report_csv(&report, &mut out)?;
    out.flush()?;
    Ok(EXIT_OK)
}

fn experiment(a: ExperimentArgs) -> Result<i32> {
    let variants = a
        .methods
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(str::parse::<MethodVariant>)
        .collect::<Result<Vec<_>>>()?;
    if variants.is_empty() {
        return Err(Error::invalid("--methods is empty"));
    }
    let mut setups = Vec::with_capacity(variants.len());
    for v in variants {
        let mut policy = a.policy.clone();
        if !v.method.uses_kernel() {
            // Alignment methods ignore bandwidth settings.
            policy.bandwidth = BandwidthArg::Default;
            policy.grid = None;
            policy.grid_h = None;
        }
        setups.push(MethodSetup::new(v.tag(), build_spec(v, &policy, &a.sampler)?));
    }
    let mut sim = SimConfig::new(a.function, a.n, a.sampler.seed);
    sim.covariate = covariate_mode(&a.covariate)?;
    if let Some(l) = a.sim_lag {
        sim.lag = l;
    }
    let report = run_experiment(&sim, &setups, a.replicates)?;
    fs::create_dir_all(&a.out)?;
    let mut csv_out = BufWriter::new(File::create(a.out.join("experiment.csv"))?);
    write_experiment_csv(&report, &mut csv_out)?;
    csv_out.flush()?;
    fs::write(
        a.out.join(format!("boxplot_{}.svg", a.function)),
        experiment_box_plot(&report),
    )?;
    for m in &report.methods {
        match report.mean_rmse(m) {
            Some(r) => println!("{m}: mean RMSE {r:.4}"),
            None => println!("{m}: no successful replicate"),
        }
    }
    let failures = report.failures();
    if failures > 0 {
        eprintln!("{failures} experiment cell(s) failed; see the error column");
        return Ok(EXIT_NUMERIC);
    }
    Ok(EXIT_OK)
}
