//! The four verbs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gfrls::estimator::{relative_error, BatchAccumulator};
use gfrls::excitation::{certify_excitation, min_persistency_window, weighted_regressor};
use gfrls::guarantees::{BoundConstants, GuaranteeReport};
use gfrls::simulation::{self, Compliance, RunOptions};
use gfrls::{EstimatorState, NoiseProfile, RectMatrix, RobustnessBound, Sample, SpdMatrix, Trajectory, Vector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Check, ConfigError, ExperimentConfig, Format};
use crate::trace::{self, csv_io, fmt_f64};

/// Flags shared by every verb.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<Format>,
}

/// What a verb produced, plus anything `--strict` should fail on.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub violations: Vec<String>,
}

struct Loaded {
    cfg: ExperimentConfig,
    samples: Vec<Sample>,
    generated: Option<simulation::Generated>,
    weighted: bool,
}

fn load(config: &Path, ov: &Overrides) -> Result<Loaded> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = ov.seed {
        match &mut cfg.scenario {
            Some(s) => s.seed = seed,
            None => bail!("--seed only applies to [scenario] configs"),
        }
    }
    if let Some(dir) = &ov.out_dir {
        cfg.output.dir = dir.clone();
    }
    if let Some(f) = ov.format {
        cfg.output.format = f;
    }
    if let Some(spec) = &cfg.scenario {
        let generated = simulation::generate(spec)?;
        let weighted = !matches!(spec.gamma, simulation::GammaKind::Identity);
        Ok(Loaded {
            samples: generated.samples(),
            generated: Some(generated),
            weighted,
            cfg,
        })
    } else {
        let path = &cfg.trace.as_ref().expect("validated").path;
        let (layout, samples) =
            trace::read_trace(path).with_context(|| format!("reading trace {}", path.display()))?;
        cfg.validate_dims(layout.n, layout.p)?;
        Ok(Loaded {
            samples,
            generated: None,
            weighted: layout.weighted,
            cfg,
        })
    }
}

fn initial_state(cfg: &ExperimentConfig, n: usize, p: usize) -> Result<EstimatorState> {
    let theta0 = cfg
        .estimator
        .theta0
        .clone()
        .map(Vector::from_vec)
        .unwrap_or_else(|| Vector::zeros(n));
    let p0 = match &cfg.estimator.p0 {
        Some(m) => m.to_spd(n)?,
        None => SpdMatrix::identity(n),
    };
    Ok(EstimatorState::init(theta0, &p0, p)?)
}

/// One output row per `k = 0..=K`: the estimate before step `k` and, for
/// `k < K`, that step's diagnostics.
#[derive(Debug, Serialize)]
struct Row {
    k: usize,
    theta: Vec<f64>,
    theta_true: Option<Vec<f64>>,
    err_tilde: Option<f64>,
    err_check: Option<f64>,
    lyapunov: Option<f64>,
    lambda_min_info: f64,
    well_posed_margin: Option<f64>,
    proper: Option<bool>,
    delta_v_gap: Option<f64>,
}

fn rows(tr: &Trajectory, truth: Option<&[Vector]>) -> Vec<Row> {
    (0..=tr.len())
        .map(|k| {
            let st = tr.state(k).expect("k in range");
            let step = tr.steps.get(k);
            let tilde = truth.map(|t| st.theta() - &t[k]);
            Row {
                k,
                theta: st.theta().iter().copied().collect(),
                theta_true: truth.map(|t| t[k].iter().copied().collect()),
                err_tilde: tilde.as_ref().map(|d| d.norm()),
                err_check: truth.map(|t| (st.theta() - &t[k.saturating_sub(1)]).norm()),
                lyapunov: tilde.as_ref().map(|d| st.info().quad_form(d)),
                lambda_min_info: st.info().min_eigenvalue(),
                well_posed_margin: step.map(|s| s.diagnostics.well_posed_margin),
                proper: step.map(|s| s.directive.declared_proper),
                delta_v_gap: step.map(|s| s.diagnostics.delta_v_gap_mineig),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_rows(path: &Path, rows: &[Row], n: usize, format: Format) -> Result<PathBuf> {
    match format {
        Format::Json => {
            let path = path.with_extension("json");
            fs::write(&path, serde_json::to_string_pretty(rows)? + "\n")?;
            Ok(path)
        }
        Format::Csv => {
            let path = path.with_extension("csv");
            let with_truth = rows.first().is_some_and(|r| r.theta_true.is_some());
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_path(&path)?;
            let mut header = vec!["k".to_string()];
            header.extend((1..=n).map(|i| format!("theta_{i}")));
            if with_truth {
                header.extend((1..=n).map(|i| format!("theta_true_{i}")));
                header.extend(["err_tilde", "err_check", "lyapunov"].map(String::from));
            }
            header.extend(["lambda_min_info", "well_posed_margin", "proper", "delta_v_gap"].map(String::from));
            w.write_record(&header)?;
            for r in rows {
                let mut rec = vec![r.k.to_string()];
                rec.extend(r.theta.iter().map(|v| fmt_f64(*v)));
                if let Some(t) = &r.theta_true {
                    rec.extend(t.iter().map(|v| fmt_f64(*v)));
                    rec.extend([opt(r.err_tilde), opt(r.err_check), opt(r.lyapunov)]);
                }
                rec.push(fmt_f64(r.lambda_min_info));
                rec.push(opt(r.well_posed_margin));
                rec.push(r.proper.map(|b| b.to_string()).unwrap_or_default());
                rec.push(opt(r.delta_v_gap));
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(path)
        }
    }
}

/// Plot-ready columns: `k, err_tilde, err_check, lambda_min_info, eps`.
fn write_plot(path: &Path, rows: &[Row], eps: Option<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(["k", "err_tilde", "err_check", "lambda_min_info", "eps"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            opt(r.err_tilde),
            opt(r.err_check),
            fmt_f64(r.lambda_min_info),
            opt(eps),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The report object with the checks the config did not ask for nulled.
fn report_json(report: &GuaranteeReport, cfg: &ExperimentConfig) -> Result<Value> {
    let mut v = serde_json::to_value(report)?;
    let obj = v.as_object_mut().expect("report is an object");
    for (check, key) in [
        (Check::Conditions, "profile"),
        (Check::Tier, "tier"),
        (Check::Bound, "bound"),
        (Check::Lemmas, "lemma_checks"),
        (Check::RateFit, "rate_fit"),
    ] {
        if !cfg.wants(check) {
            obj.insert(key.into(), Value::Null);
        }
    }
    Ok(v)
}

fn violations(report: &GuaranteeReport, cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    let lc = &report.lemma_checks;
    if cfg.wants(Check::Lemmas) {
        if !lc.decrement.holds() {
            out.push(format!("Lyapunov decrement bound violated at steps {:?}", lc.decrement.violations));
        }
        if let Some(c) = lc.covariance_bound.as_ref().filter(|c| !c.holds()) {
            out.push(format!("covariance bound P_k <= bI violated at steps {:?}", c.violations));
        }
        if let Some(c) = lc.window_decrement.as_ref().filter(|c| !c.summary.holds()) {
            out.push(format!("window decrement bound violated at steps {:?}", c.summary.violations));
        }
    }
    if cfg.wants(Check::Bound) {
        if let Some(c) = &report.bound.compliance {
            if c.transient.is_none() {
                out.push(format!(
                    "error did not settle below the ultimate bound eps = {} within the horizon",
                    fmt_f64(c.eps)
                ));
            }
        }
    }
    out
}

pub fn run(config: &Path, ov: &Overrides) -> Result<Outcome> {
    let Loaded {
        cfg,
        samples,
        generated,
        weighted,
    } = load(config, ov)?;
    let (n, p) = (samples[0].n(), samples[0].p());
    let init = initial_state(&cfg, n, p)?;
    let mut strategy = cfg.strategy.build(n, p)?;
    let window = cfg.analysis.window.min(samples.len());

    let (trajectory, report, truth) = match &generated {
        Some(g) => {
            let mut rec = simulation::run(
                g,
                strategy.as_mut(),
                init,
                RunOptions {
                    window,
                    rate_fit: if cfg.wants(Check::RateFit) { cfg.analysis.rate_fit } else { None },
                },
            )?;
            if let Some(noise) = &cfg.analysis.noise {
                let err_check = rec.err_check();
                attach_bound(&mut rec.report, noise, Some(&err_check));
            }
            (rec.trajectory, rec.report, Some(g.theta_true_path()))
        }
        None => {
            let trajectory = Trajectory::record(init, strategy.as_mut(), &samples)?;
            let report = GuaranteeReport::analyze(&trajectory, window, cfg.analysis.noise.as_ref())?;
            (trajectory, report, None)
        }
    };

    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let rows = rows(&trajectory, truth.as_deref());
    let traj_path = write_rows(&dir.join("trajectory"), &rows, n, cfg.output.format)?;
    let report_value = report_json(&report, &cfg)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report_value)? + "\n")?;
    if cfg.output.plot {
        write_plot(&dir.join("plot.csv"), &rows, report.bound.value.map(|b| b.eps))?;
    }
    if generated.is_some() {
        trace::write_trace(&dir.join("trace.csv"), &samples, weighted)?;
    }

    let summary = json!({
        "steps": trajectory.len(),
        "tier": report.tier,
        "eps": report.bound.value.map(|b| b.eps),
        "trajectory": traj_path,
        "report": dir.join("report.json"),
    });
    Ok(Outcome {
        stdout: serde_json::to_string(&summary)? + "\n",
        violations: violations(&report, &cfg),
    })
}

/// Replaces the measured-noise bound with one from configured noise bounds.
fn attach_bound(report: &mut GuaranteeReport, noise: &NoiseProfile, err_check: Option<&[f64]>) {
    match gfrls::guarantees::compute_bound(&report.profile, noise) {
        Ok(b) => {
            report.bound.value = Some(b);
            report.bound.unavailable = None;
            report.bound.compliance = err_check.map(|e| {
                let k0 = report.profile.k0;
                let mut c = Compliance::measure(&e[k0..], b.eps);
                c.transient = c.transient.map(|t| t + k0);
                c
            });
        }
        Err(e) => {
            report.bound.value = None;
            report.bound.unavailable = Some(e.to_string());
            report.bound.compliance = None;
        }
    }
}

pub fn certify_pe(trace_path: &Path, window: usize, max_window: Option<usize>, format: Format) -> Result<Outcome> {
    let (_, samples) = trace::read_trace(trace_path)
        .with_context(|| format!("reading trace {}", trace_path.display()))?;
    let weighted: Vec<RectMatrix> = samples
        .iter()
        .map(|s| weighted_regressor(&s.phi, &s.gamma))
        .collect::<gfrls::Result<_>>()?;
    let report = match max_window {
        Some(m) => min_persistency_window(&weighted, m)?
            .with_context(|| format!("not persistently exciting for any window up to {m}"))?,
        None => certify_excitation(&weighted, window)?,
    };
    let stdout = match format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(["window", "alpha_bar", "beta_bar", "is_pe", "k_start", "k_end"])?;
            w.write_record([
                report.window.to_string(),
                fmt_f64(report.alpha_bar),
                fmt_f64(report.beta_bar),
                report.is_pe.to_string(),
                report.horizon.0.to_string(),
                report.horizon.1.to_string(),
            ])?;
            String::from_utf8(w.into_inner().map_err(|e| csv_io(e.into_error().into()))?)?
        }
    };
    let violations = if report.is_pe {
        Vec::new()
    } else {
        vec![format!("not persistently exciting with window {}", report.window)]
    };
    Ok(Outcome { stdout, violations })
}

/// Input of `bound`: the five constants and optional noise bounds.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub a: f64,
    pub b: f64,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub window: usize,
    #[serde(default)]
    pub noise: NoiseProfile,
    /// Errors-in-variables form: drop the drift term.
    #[serde(default)]
    pub eiv: bool,
}

pub fn bound(inputs: &Path, format: Format) -> Result<Outcome> {
    let text = fs::read_to_string(inputs).with_context(|| format!("reading {}", inputs.display()))?;
    let parsed: BoundInputs = match inputs.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text)?,
        _ => toml::from_str(&text)?,
    };
    let mut noise = parsed.noise;
    if parsed.eiv {
        noise.delta_theta = 0.0;
    }
    let b = RobustnessBound::from_constants(
        BoundConstants {
            a: parsed.a,
            b: parsed.b,
            alpha_bar: parsed.alpha_bar,
            beta_bar: parsed.beta_bar,
            window: parsed.window,
        },
        noise,
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let stdout = match format {
        Format::Json => serde_json::to_string_pretty(&b)? + "\n",
        Format::Csv => {
            let mut s = String::from("delta_n,eps_star,zeta,eps\n");
            s += &format!("{},{},{},{}\n", fmt_f64(b.delta_n), fmt_f64(b.eps_star), fmt_f64(b.zeta), fmt_f64(b.eps));
            s
        }
    };
    Ok(Outcome {
        stdout,
        violations: Vec::new(),
    })
}

/// Largest relative gap between the recursive estimate and the batch
/// minimizer, checked after every step.
pub const ORACLE_TOLERANCE: f64 = 1e-8;

pub fn oracle(config: &Path, ov: &Overrides) -> Result<Outcome> {
    let Loaded { cfg, samples, .. } = load(config, ov)?;
    let (n, p) = (samples[0].n(), samples[0].p());
    let init = initial_state(&cfg, n, p)?;
    let mut strategy = cfg.strategy.build(n, p)?;
    let tr = Trajectory::record(init, strategy.as_mut(), &samples)?;
    let mut acc = BatchAccumulator::from_state(tr.initial_state())?;
    let mut worst = (0.0_f64, 0usize);
    for (k, s) in tr.steps.iter().enumerate() {
        acc.accumulate(&s.sample, &s.directive.f, s.state.theta())?;
        let err = relative_error(&acc.minimizer()?, tr.state(k + 1).expect("in range").theta());
        if err > worst.0 {
            worst = (err, k + 1);
        }
    }
    let format = ov.format.unwrap_or(cfg.output.format);
    let stdout = match format {
        Format::Json => {
            serde_json::to_string_pretty(&json!({
                "steps": tr.len(),
                "max_relative_error": worst.0,
                "worst_step": worst.1,
                "tolerance": ORACLE_TOLERANCE,
            }))? + "\n"
        }
        Format::Csv => format!(
            "steps,max_relative_error,worst_step,tolerance\n{},{},{},{}\n",
            tr.len(),
            fmt_f64(worst.0),
            worst.1,
            fmt_f64(ORACLE_TOLERANCE)
        ),
    };
    let violations = if worst.0 <= ORACLE_TOLERANCE {
        Vec::new()
    } else {
        vec![format!(
            "recursive estimate differs from batch minimizer by {} at step {}",
            fmt_f64(worst.0),
            worst.1
        )]
    };
    Ok(Outcome { stdout, violations })
}

pub fn emit(out: &Outcome) -> std::io::Result<()> {
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(out.stdout.as_bytes())?;
    stdout.flush()
}
