use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use sqzt_core::baselines::{fit_variance_model_with, mle_reconstruct, MleConfig, VarianceFitOptions};
use sqzt_core::degradation::{fit_degradation_with, levels_from_estimate, photon_report, Estimate, FitOptions};
use sqzt_core::fock::{
    cholesky_factor, default_working_dim, fidelity, squeezed_thermal_state, FockDensityMatrix, NoiseLevels,
    SqueezedThermalParams,
};
use sqzt_core::homodyne::{
    binned_variances, export_csv, gen_dataset, ingest_csv, record_params, sample_scan, DatasetReader, DatasetSpec,
    LabelKind, ParamRanges, QuadratureScan,
};
use sqzt_estimators::{
    load_checkpoint, predict_density, predict_params, save_checkpoint, train_on, write_loss_log, AdamConfig,
    CnnConfig, HeadKind, HeadSpec, Model, TrainConfig, TrainingData, TrainingMeta,
};

use crate::manifest::{sibling, RunManifest};
use crate::{
    json, CovfitArgs, CovfitOpts, ExportArgs, FitDegradationArgs, GenArgs, MleArgs, MleOpts, PredictArgs,
    ReportArgs, ScanArgs, TrainArgs,
};
use crate::Command;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Mle(a) => mle(a),
        Command::Covfit(a) => covfit(a),
        Command::FitDegradation(a) => fit_degradation(a),
        Command::Report(a) => report(a),
        Command::Export(a) => export(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let t = Instant::now();
    let spec = DatasetSpec {
        ranges: ParamRanges {
            r: (a.r_min, a.r_max),
            theta_s: (a.theta_min, a.theta_max),
            n_th: (a.nth_min, a.nth_max),
        },
        count: a.n,
        seq_len: a.seq_len,
        label_kind: a.labels,
        m: if a.labels == LabelKind::Cholesky { a.m } else { 0 },
        seed: a.seed,
    };
    let header = gen_dataset(&spec, &a.out).with_context(|| format!("generating {}", a.out.display()))?;
    let mut man = RunManifest::new("gen", serde_json::to_value(&spec)?, vec![a.seed]);
    man.output(&a.out)?;
    man.finish(t.elapsed(), &a.out)?;
    print_json(&json::to_string(&header)?)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let t = Instant::now();
    let reader = DatasetReader::open(&a.data).with_context(|| format!("opening {}", a.data.display()))?;
    let header = reader.header().clone();
    drop(reader);
    let mut head = match header.label_kind {
        LabelKind::Params => HeadSpec::characteristic(),
        LabelKind::Cholesky => HeadSpec::reconstruction(header.m),
    };
    if let Some(h) = &a.hidden {
        head.hidden = h.clone();
    }
    let mut config = CnnConfig::table1(header.seq_len, a.width_scale, head);
    config.two_channel = a.two_channel;
    config.input_scale = a.input_scale;
    let tc = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        val_fraction: a.val_fraction,
        seed: a.seed,
        plateau_patience: a.patience,
        augment: !a.no_augment,
        ..TrainConfig::default()
    };

    let mut model = Model::<f32>::new(config.clone(), a.seed)?;
    let data = TrainingData::load(&a.data)?;
    let rep = train_on(&mut model, &data, &tc, |r| {
        eprintln!(
            "epoch {:>3}  train {:.6}  val {:.6}  lr {:.2e}",
            r.epoch, r.train_mse, r.val_mse, r.lr
        );
    })?;
    let meta = TrainingMeta {
        epochs: tc.epochs,
        final_train_mse: rep.final_train_mse,
        final_val_mse: rep.final_val_mse,
        seed: tc.seed,
    };
    save_checkpoint(&model, Some(meta), &a.out)?;
    let log = a.log.clone().unwrap_or_else(|| sibling(&a.out, "log"));
    let mut w = BufWriter::new(File::create(&log).with_context(|| format!("creating {}", log.display()))?);
    write_loss_log(&rep.history, &mut w)?;
    w.flush()?;

    let mut man = RunManifest::new(
        "train",
        json!({ "model": config, "training": tc, "parameters": model.param_count() }),
        vec![a.seed],
    );
    man.input(&a.data)?;
    man.output(&a.out)?;
    man.output(&log)?;
    man.finish(t.elapsed(), &a.out)?;
    print_json(&json::to_string(&json!({
            "parameters": model.param_count(),
            "flatten_len": model.flatten_len(),
            "train_count": rep.train_count,
            "val_count": rep.val_count,
            "initial_train_mse": rep.initial_train_mse,
            "final_train_mse": rep.final_train_mse,
            "final_val_mse": rep.final_val_mse,
            "best_epoch": rep.best_epoch,
        }))?)?;
    Ok(())
}

/// A scan plus the generator truth when it came from a dataset.
struct LoadedScan {
    scan: QuadratureScan,
    truth: Option<SqueezedThermalParams>,
}

fn load_scan(s: &ScanArgs) -> Result<LoadedScan> {
    if let Some(path) = &s.scan {
        let scan = ingest_csv(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(LoadedScan { scan, truth: None });
    }
    let path = s.data.as_ref().expect("clap requires --scan or --data");
    let mut reader = DatasetReader::open(path).with_context(|| format!("opening {}", path.display()))?;
    if s.index >= reader.header().count {
        bail!("record {} out of range for {} records", s.index, reader.header().count);
    }
    let scan = reader.read_record(s.index)?.scan()?;
    let truth = record_params(reader.header(), s.index)?;
    Ok(LoadedScan {
        scan,
        truth: Some(truth),
    })
}

fn source_path(s: &ScanArgs) -> &Path {
    s.scan.as_deref().or(s.data.as_deref()).expect("clap requires --scan or --data")
}

/// Thins `scan` to the model input length when it is longer.
fn fit_to_model(scan: &QuadratureScan, model: &Model<f32>, seed: u64) -> Result<QuadratureScan> {
    let n = model.input_len();
    if scan.len() == n {
        Ok(scan.clone())
    } else if scan.len() > n {
        Ok(scan.resample(n, seed)?)
    } else {
        bail!("scan has {} points but the model needs {n}", scan.len())
    }
}

fn params_summary(p: &SqueezedThermalParams) -> Value {
    json!({
        "params": p,
        "levels": levels_from_estimate(Estimate::Params(p)),
        "photons": photon_report(Estimate::Params(p)),
    })
}

fn density_summary(rho: &FockDensityMatrix) -> Result<Value> {
    Ok(json!({
        "m": rho.dim(),
        "cholesky": cholesky_factor(rho)?.pack(),
        "levels": levels_from_estimate(Estimate::Density(rho)),
        "photons": photon_report(Estimate::Density(rho)),
    }))
}

/// Truth block, with the fidelity of `rho` against the true state when given.
fn truth_summary(truth: &SqueezedThermalParams, rho: Option<&FockDensityMatrix>) -> Result<Value> {
    let mut v = params_summary(truth);
    if let Some(rho) = rho {
        let m = rho.dim();
        let exact = squeezed_thermal_state(truth, m, default_working_dim(m, truth.r()))?;
        v["fidelity"] = json!(fidelity(rho, &exact)?);
    }
    Ok(v)
}

fn model_prediction(model: &Model<f32>, scan: &QuadratureScan, truth: Option<&SqueezedThermalParams>) -> Result<Value> {
    let mut v = match model.config().head.kind {
        HeadKind::Characteristic => {
            let mut v = params_summary(&predict_params(model, scan)?);
            v["head"] = json!("characteristic");
            v
        }
        HeadKind::Reconstruction { .. } => {
            let rho = predict_density(model, scan)?;
            let mut v = density_summary(&rho)?;
            v["head"] = json!("reconstruction");
            if let Some(t) = truth {
                v["fidelity"] = truth_summary(t, Some(&rho))?["fidelity"].clone();
            }
            v
        }
    };
    v["input_len"] = json!(model.input_len());
    Ok(v)
}

/// Writes `value` to `out` with a manifest, or prints it.
fn emit(value: &Value, out: Option<&Path>, man: RunManifest, t: Instant) -> Result<()> {
    match out {
        Some(path) => {
            json::write(value, path)?;
            let mut man = man;
            man.output(path)?;
            man.finish(t.elapsed(), path)?;
        }
        None => print_json(&json::to_string(value)?)?,
    }
    Ok(())
}

/// A closed stdout (`sqzt ... | head`) ends the output quietly.
fn print_json(s: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{s}").and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let t = Instant::now();
    let (model, meta) = load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let src = load_scan(&a.source)?;
    let scan = fit_to_model(&src.scan, &model, a.resample_seed)?;
    let mut v = model_prediction(&model, &scan, src.truth.as_ref())?;
    if let Some(truth) = &src.truth {
        v["truth"] = params_summary(truth);
    }
    let mut man = RunManifest::new(
        "predict",
        json!({ "model": meta, "index": a.source.index, "resample_seed": a.resample_seed }),
        vec![a.resample_seed],
    );
    man.input(&a.model)?;
    man.input(source_path(&a.source))?;
    emit(&v, a.out.as_deref(), man, t)
}

fn mle_config(o: &MleOpts) -> MleConfig {
    MleConfig {
        m: o.m,
        x_max: o.x_max,
        x_bins: o.x_bins,
        phase_bins: o.phase_bins,
        max_iter: o.max_iter,
        tol: o.tol,
    }
}

fn run_mle(scan: &QuadratureScan, cfg: &MleConfig, truth: Option<&SqueezedThermalParams>) -> Result<Value> {
    let out = mle_reconstruct(scan, cfg)?;
    let mut v = density_summary(&out.rho)?;
    v["iterations"] = json!(out.iterations);
    v["converged"] = json!(out.converged);
    v["log_likelihood"] = json!(out.log_likelihood.last());
    if let Some(t) = truth {
        v["fidelity"] = truth_summary(t, Some(&out.rho))?["fidelity"].clone();
    }
    Ok(v)
}

fn mle(a: MleArgs) -> Result<()> {
    let t = Instant::now();
    let src = load_scan(&a.source)?;
    let cfg = mle_config(&a.opts);
    let mut v = run_mle(&src.scan, &cfg, src.truth.as_ref())?;
    if let Some(truth) = &src.truth {
        v["truth"] = params_summary(truth);
    }
    let mut man = RunManifest::new("mle", json!({ "mle": cfg, "index": a.source.index }), vec![]);
    man.input(source_path(&a.source))?;
    emit(&v, a.out.as_deref(), man, t)
}

fn run_covfit(scan: &QuadratureScan, o: &CovfitOpts) -> Result<Value> {
    let bins = binned_variances(scan, o.bins)?;
    let fit = fit_variance_model_with(
        &bins,
        &VarianceFitOptions {
            reweight_passes: o.reweight_passes,
        },
    )?;
    let (v_min, v_max) = fit.extremes();
    let mut v = json!({
        "fit": fit,
        "levels": NoiseLevels::from_variances(v_min, v_max),
    });
    if let Some(p) = &fit.params {
        v["params"] = json!(p);
        v["photons"] = json!(photon_report(Estimate::Params(p)));
    }
    Ok(v)
}

fn covfit(a: CovfitArgs) -> Result<()> {
    let t = Instant::now();
    let src = load_scan(&a.source)?;
    let mut v = run_covfit(&src.scan, &a.opts)?;
    if let Some(truth) = &src.truth {
        v["truth"] = params_summary(truth);
    }
    let mut man = RunManifest::new(
        "covfit",
        json!({ "bins": a.opts.bins, "reweight_passes": a.opts.reweight_passes, "index": a.source.index }),
        vec![],
    );
    man.input(source_path(&a.source))?;
    emit(&v, a.out.as_deref(), man, t)
}

/// Reads `sqz_db,asqz_db` rows.
fn read_points(path: &Path) -> Result<Vec<NoiseLevels>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sqz_db", "asqz_db"] {
        bail!("{}: expected header `sqz_db,asqz_db`, found {:?}", path.display(), headers);
    }
    let mut points = Vec::new();
    for row in rdr.deserialize() {
        let p: NoiseLevels = row.with_context(|| format!("parsing {}", path.display()))?;
        if !(p.sqz_db.is_finite() && p.asqz_db.is_finite()) {
            bail!("{}: non-finite level {p:?}", path.display());
        }
        points.push(p);
    }
    Ok(points)
}

fn fit_degradation(a: FitDegradationArgs) -> Result<()> {
    let t = Instant::now();
    let points = read_points(&a.points)?;
    let opts = FitOptions {
        metric: a.metric,
        max_iter: a.max_iter,
    };
    let fit = fit_degradation_with(&points, &opts)?;
    let v = serde_json::to_value(fit.report(&points, a.curve_points))?;
    let mut man = RunManifest::new(
        "fit-degradation",
        json!({ "fit": opts, "curve_points": a.curve_points }),
        vec![],
    );
    man.input(&a.points)?;
    emit(&v, a.out.as_deref(), man, t)
}

fn report(a: ReportArgs) -> Result<()> {
    let t = Instant::now();
    let src = load_scan(&a.source)?;
    let mut v = json!({ "points": src.scan.len() });
    let mut inputs: Vec<PathBuf> = Vec::new();
    for (key, path) in [("characteristic", &a.char_model), ("reconstruction", &a.recon_model)] {
        let Some(path) = path else { continue };
        let (model, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        let want = matches!(model.config().head.kind, HeadKind::Characteristic) == (key == "characteristic");
        if !want {
            bail!("{} is not a {key} checkpoint", path.display());
        }
        let scan = fit_to_model(&src.scan, &model, a.resample_seed)?;
        v[key] = model_prediction(&model, &scan, src.truth.as_ref())?;
        inputs.push(path.clone());
    }
    v["covfit"] = run_covfit(&src.scan, &a.covfit)?;
    let cfg = mle_config(&a.mle);
    v["mle"] = run_mle(&src.scan, &cfg, src.truth.as_ref())?;
    if let Some(truth) = &src.truth {
        v["truth"] = params_summary(truth);
    }
    let mut man = RunManifest::new(
        "report",
        json!({
            "mle": cfg,
            "bins": a.covfit.bins,
            "reweight_passes": a.covfit.reweight_passes,
            "resample_seed": a.resample_seed,
            "index": a.source.index,
        }),
        vec![a.resample_seed],
    );
    man.input(source_path(&a.source))?;
    for p in &inputs {
        man.input(p)?;
    }
    emit(&v, a.out.as_deref(), man, t)
}

fn export(a: ExportArgs) -> Result<()> {
    let t = Instant::now();
    let (scan, config, seeds) = match (&a.data, a.r) {
        (Some(path), _) => {
            let src = load_scan(&ScanArgs {
                scan: None,
                data: Some(path.clone()),
                index: a.index,
            })?;
            (src.scan, json!({ "index": a.index }), vec![])
        }
        (None, Some(r)) => {
            let p = SqueezedThermalParams::new(r, a.theta, a.nth)?;
            let scan = sample_scan(&p, a.points, a.phase_mode, a.seed)?;
            let cfg = json!({ "params": p, "points": a.points, "phase_mode": a.phase_mode });
            (scan, cfg, vec![a.seed])
        }
        (None, None) => unreachable!("clap requires --data or --r"),
    };
    export_csv(&scan, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let mut man = RunManifest::new("export", config, seeds);
    if let Some(path) = &a.data {
        man.input(path)?;
    }
    man.output(&a.out)?;
    man.finish(t.elapsed(), &a.out)?;
    Ok(())
}
