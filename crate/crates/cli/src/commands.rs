use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use transcount::baselines::{fit_baseline, BaselineKind};
use transcount::data::{load_csv, load_csv_with_encoding, CountDataset, Schema};
use transcount::experiments::{flexibility_study, LambdaChoice, SimConfig, SimFamily};
use transcount::link::Link;
use transcount::persist::Model;
use transcount::pmf::cumulative;
use transcount::scoring::{
    compare_models, default_lambda_grid, score, select_lambda, select_lambda_aic, NamedModel, Protocol, ScoringRule,
    TrainSize,
};
use transcount::transition::{self, Smoother, StdErrorKind, TermKind, TransitionSpec, Variant, VaryingSet, VaryingSpec};

use crate::args::*;
use crate::manifest::RunManifest;

pub const DATA_DIR_ENV: &str = "TRANSCOUNT_DATA_DIR";

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Warnings,
}

impl Status {
    fn from_warnings(w: &[String]) -> Status {
        for msg in w {
            eprintln!("warning: {msg}");
        }
        if w.is_empty() {
            Status::Ok
        } else {
            Status::Warnings
        }
    }
}

fn resolve_input(p: &Path) -> PathBuf {
    if p.exists() || p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => {
            let candidate = Path::new(&dir).join(p);
            if candidate.exists() {
                candidate
            } else {
                p.to_path_buf()
            }
        }
        None => p.to_path_buf(),
    }
}

fn sibling_schema(data: &Path) -> Option<PathBuf> {
    let stem = data.file_stem()?.to_string_lossy().into_owned();
    let p = data.with_file_name(format!("{stem}.schema.toml"));
    p.exists().then_some(p)
}

fn csv_headers(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

/// Loads the dataset and rewrites `args` with the resolved data and schema
/// paths so the manifest records what was actually read.
fn load_data(args: &mut DataArgs) -> Result<CountDataset> {
    args.data = resolve_input(&args.data);
    if let Some(s) = &args.schema {
        args.schema = Some(resolve_input(s));
    } else {
        args.schema = sibling_schema(&args.data);
    }
    let mut schema = match &args.schema {
        Some(s) => Schema::from_file(s)?,
        None => {
            let outcome = match &args.outcome {
                Some(o) => o.clone(),
                None => {
                    let headers = csv_headers(&args.data)?;
                    if headers.len() != 1 {
                        bail!(
                            "no schema found for {}; pass --outcome or --schema",
                            args.data.display()
                        );
                    }
                    headers[0].clone()
                }
            };
            Schema::numeric_from_csv(&args.data, &outcome)?
        }
    };
    if let Some(o) = &args.outcome {
        schema.columns.retain(|c| &c.name != o);
        schema.outcome = o.clone();
    }
    Ok(load_csv(&args.data, &schema)?)
}

fn record_inputs(manifest: &mut RunManifest, data: &DataArgs) -> Result<()> {
    manifest.input(&data.data)?;
    if let Some(s) = &data.schema {
        manifest.input(s)?;
    }
    Ok(())
}

fn baseline_kind(kind: ModelKind) -> Option<BaselineKind> {
    match kind {
        ModelKind::Poisson => Some(BaselineKind::Poisson),
        ModelKind::Negbin => Some(BaselineKind::NegBin),
        ModelKind::Zip => Some(BaselineKind::Zip),
        ModelKind::Hurdle => Some(BaselineKind::Hurdle),
        _ => None,
    }
}

fn parse_overrides(items: &[String]) -> Result<BTreeMap<String, f64>> {
    items
        .iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("--varying-lambda expects NAME=VALUE, got `{s}`"))?;
            let v: f64 = v.parse().with_context(|| format!("invalid smoothing parameter in `{s}`"))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

fn transition_spec(kind: ModelKind, smoother: SmootherArg, t: &TransitionArgs) -> Result<TransitionSpec> {
    let variant = match kind {
        ModelKind::TransitionZero => Variant::ZeroSplit,
        ModelKind::TransitionVarying => Variant::Varying(VaryingSpec {
            covariates: if t.varying.is_empty() {
                VaryingSet::All
            } else {
                VaryingSet::Only(t.varying.clone())
            },
            lambda_overrides: parse_overrides(&t.varying_lambda)?,
        }),
        ModelKind::Transition => Variant::Basic,
        other => bail!("{other:?} is not a transition model"),
    };
    if kind != ModelKind::TransitionVarying && (!t.varying.is_empty() || !t.varying_lambda.is_empty()) {
        bail!("--varying and --varying-lambda apply only to --model transition-varying");
    }
    let spec = TransitionSpec {
        link: match t.link {
            LinkArg::Logit => Link::Logit,
            LinkArg::Cloglog => Link::Cloglog,
        },
        smoother: match smoother {
            SmootherArg::Psplines => Smoother::PSplines {
                num_basis: t.num_basis,
                degree: t.degree,
                order: t.order,
            },
            SmootherArg::ThetaQuadratic => Smoother::ThetaQuadratic,
        },
        lambda: t.lambda,
        max_category: t.max_category,
        variant,
        std_errors: match t.std_errors {
            StdErrorArg::Model => StdErrorKind::Model,
            StdErrorArg::Sandwich => StdErrorKind::Sandwich,
        },
        ..Default::default()
    };
    spec.validate()?;
    Ok(spec)
}

fn protocol(p: &ProtocolArgs) -> Result<Protocol> {
    if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) {
        bail!("--train-fraction must lie in (0, 1)");
    }
    Ok(Protocol {
        replications: p.replications,
        train: match p.train_size {
            Some(c) => TrainSize::Count(c),
            None => TrainSize::Fraction(p.train_fraction),
        },
        seed: p.seed,
        r_max: p.r_max,
    })
}

fn grid_or_default(grid: &[f64]) -> Vec<f64> {
    if grid.is_empty() {
        default_lambda_grid()
    } else {
        grid.to_vec()
    }
}

fn print_theta(m: &transition::FittedTransitionModel) {
    let explicit = m
        .layout
        .terms
        .iter()
        .any(|t| matches!(t.kind, TermKind::ThetaFree(_)));
    println!("r theta se");
    for (r, th) in m.theta().iter().enumerate() {
        let se = if explicit { m.std_error(&format!("theta[{r}]")) } else { None };
        let se = se.map_or_else(|| "---".to_string(), |s| format!("{s:.6}"));
        println!("{r} {th:.6} {se}");
    }
}

pub fn fit(mut args: FitArgs, jobs: Option<usize>) -> Result<Status> {
    let data = load_data(&mut args.data)?;
    let model = match baseline_kind(args.model) {
        Some(kind) => Model::Baseline(fit_baseline(kind, &data)?),
        None => {
            let spec = transition_spec(args.model, args.transition.smoother, &args.transition)?;
            Model::Transition(transition::fit(&data, &spec)?)
        }
    };
    model.save(&args.output)?;
    print!("{}", model.summarize());
    match &model {
        Model::Transition(m) => {
            if args.show_theta || data.p() == 0 {
                print_theta(m);
            }
            println!("loglik {:.6} edf {:.4} aic {:.4} M {}", m.loglik, m.edf, m.aic(), m.max_category());
        }
        Model::Baseline(b) => println!("loglik {:.6}", b.loglik),
    }
    let mut manifest = RunManifest::new("fit", &args, None, jobs)?;
    record_inputs(&mut manifest, &args.data)?;
    manifest.finish(&[&args.output])?;
    Ok(Status::from_warnings(&model.warnings()))
}

pub fn predict(mut args: PredictArgs, jobs: Option<usize>) -> Result<Status> {
    args.model_file = resolve_input(&args.model_file);
    args.data = resolve_input(&args.data);
    let model = Model::load(&args.model_file)?;
    let data = load_csv_with_encoding(&args.data, model.encoding(), false)?;
    let dist = model.predict(&data.covariates, Some(args.max_category.unwrap_or(30)))?;
    let sink: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["obs", "r", "pmf", "cdf"])?;
    for (i, pmf) in dist.pmf.iter().enumerate() {
        for (r, (p, c)) in pmf.iter().zip(cumulative(pmf)).enumerate() {
            w.write_record([i.to_string(), r.to_string(), p.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    drop(w);
    if let Some(out) = &args.output {
        let mut manifest = RunManifest::new("predict", &args, None, jobs)?;
        manifest.input(&args.model_file)?;
        manifest.input(&args.data)?;
        manifest.finish(&[out])?;
    }
    Ok(Status::from_warnings(&model.warnings()))
}

pub fn score_cmd(mut args: ScoreArgs, jobs: Option<usize>) -> Result<Status> {
    args.model_file = resolve_input(&args.model_file);
    args.data = resolve_input(&args.data);
    let model = Model::load(&args.model_file)?;
    let data = load_csv_with_encoding(&args.data, model.encoding(), true)?;
    let max_y = data.outcomes.iter().copied().max().unwrap_or(0);
    let m = args.max_category.unwrap_or(args.r_max.max(max_y) + 1);
    let dist = model.predict(&data.covariates, Some(m))?;
    let y = &data.outcomes;
    let rps = score(ScoringRule::Rps, y, &dist, args.r_max)?;
    let brier = score(ScoringRule::Brier, y, &dist, args.r_max)?;
    let log = score(ScoringRule::Log, y, &dist, args.r_max)?;
    println!("rps {:.6}", rps.mean);
    println!("brier {:.6}", brier.mean);
    println!("log {:.6}", log.mean);
    let mut warnings = model.warnings();
    if log.mean.is_infinite() {
        warnings.push("log score is infinite: an outcome has zero predicted probability".into());
    }
    if let Some(out) = &args.output {
        let mut w = csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
        w.write_record(["obs", "outcome", "rps", "brier", "log"])?;
        for i in 0..y.len() {
            w.write_record([
                i.to_string(),
                y[i].to_string(),
                rps.per_observation[i].to_string(),
                brier.per_observation[i].to_string(),
                log.per_observation[i].to_string(),
            ])?;
        }
        w.flush()?;
        drop(w);
        let mut manifest = RunManifest::new("score", &args, None, jobs)?;
        manifest.input(&args.model_file)?;
        manifest.input(&args.data)?;
        manifest.finish(&[out])?;
    }
    Ok(Status::from_warnings(&warnings))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn cv(mut args: CvArgs, jobs: Option<usize>) -> Result<Status> {
    let data = load_data(&mut args.data)?;
    let spec = transition_spec(args.model, args.transition.smoother, &args.transition)?;
    let grid = grid_or_default(&args.grid);
    let mut warnings = Vec::new();
    let mut rows: Vec<[String; 3]> = Vec::new();
    match args.method {
        CvMethod::Resampling => {
            let sel = select_lambda(&data, &spec, &grid, &protocol(&args.protocol)?)?;
            println!("lambda mean_rps failures");
            for c in &sel.curve {
                println!("{} {} {}", c.lambda, c.mean_rps.map_or("---".into(), |m| format!("{m:.6}")), c.failures);
                if c.failures > 0 {
                    warnings.push(format!("{} failed fits at lambda = {}", c.failures, c.lambda));
                }
                rows.push([c.lambda.to_string(), fmt_opt(c.mean_rps), c.failures.to_string()]);
            }
            println!("selected lambda {}", sel.lambda);
        }
        CvMethod::Aic => {
            let sel = select_lambda_aic(&data, &spec, &grid)?;
            println!("term lambda");
            println!("theta {}", sel.spec.lambda);
            rows.push(["theta".into(), sel.spec.lambda.to_string(), String::new()]);
            if let Variant::Varying(v) = &sel.spec.variant {
                for (name, l) in &v.lambda_overrides {
                    println!("{name} {l}");
                    rows.push([name.clone(), l.to_string(), String::new()]);
                }
            }
            println!("aic {:.4} edf {:.4} sweeps {}", sel.aic, sel.edf, sel.sweeps);
        }
    }
    if let Some(out) = &args.output {
        let mut w = csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
        match args.method {
            CvMethod::Resampling => w.write_record(["lambda", "mean_rps", "failures"])?,
            CvMethod::Aic => w.write_record(["term", "lambda"])?,
        }
        for r in &rows {
            match args.method {
                CvMethod::Resampling => w.write_record(r)?,
                CvMethod::Aic => w.write_record(&r[..2])?,
            }
        }
        w.flush()?;
        drop(w);
        let mut manifest = RunManifest::new("cv", &args, Some(args.protocol.seed), jobs)?;
        record_inputs(&mut manifest, &args.data)?;
        manifest.finish(&[out])?;
    }
    Ok(Status::from_warnings(&warnings))
}

/// `KIND[@SMOOTHER][=LAMBDA|=cv]`
struct ModelToken {
    kind: ModelKind,
    smoother: Option<SmootherArg>,
    lambda: Option<LambdaToken>,
}

enum LambdaToken {
    Value(f64),
    Cv,
}

fn parse_token(token: &str) -> Result<ModelToken> {
    use clap::ValueEnum;
    let (head, lambda) = match token.split_once('=') {
        Some((h, "cv")) => (h, Some(LambdaToken::Cv)),
        Some((h, v)) => (
            h,
            Some(LambdaToken::Value(
                v.parse().with_context(|| format!("invalid smoothing parameter in model `{token}`"))?,
            )),
        ),
        None => (token, None),
    };
    let (kind, smoother) = match head.split_once('@') {
        Some((k, s)) => (k, Some(s)),
        None => (head, None),
    };
    let kind = ModelKind::from_str(kind, true).map_err(|_| anyhow!("unknown model kind in `{token}`"))?;
    let smoother = smoother
        .map(|s| SmootherArg::from_str(s, true).map_err(|_| anyhow!("unknown smoother in `{token}`")))
        .transpose()?;
    if baseline_kind(kind).is_some() && (smoother.is_some() || lambda.is_some()) {
        bail!("baseline model `{token}` takes no smoother or smoothing parameter");
    }
    Ok(ModelToken { kind, smoother, lambda })
}

#[derive(Serialize)]
struct CompareSummary<'a> {
    models: Vec<SummaryRow<'a>>,
    excluded_replications: usize,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    model: &'a str,
    lambda: Option<f64>,
    mean_rps: f64,
    mean_brier: f64,
    mean_log: f64,
    failures: usize,
}

pub fn compare(mut args: CompareArgs, jobs: Option<usize>) -> Result<Status> {
    let data = load_data(&mut args.data)?;
    let protocol = protocol(&args.protocol)?;
    let grid = grid_or_default(&args.grid);
    let mut models = Vec::new();
    let mut lambdas = Vec::new();
    for token in &args.models {
        let t = parse_token(token)?;
        if let Some(kind) = baseline_kind(t.kind) {
            models.push(NamedModel {
                name: token.clone(),
                ..NamedModel::baseline(kind)
            });
            lambdas.push(None);
            continue;
        }
        let smoother = t.smoother.unwrap_or(args.transition.smoother);
        let mut spec = transition_spec(t.kind, smoother, &args.transition)?;
        let select = match t.lambda {
            Some(LambdaToken::Value(l)) => {
                spec.lambda = l;
                false
            }
            Some(LambdaToken::Cv) => true,
            None => args.select_lambda,
        };
        if select {
            let sel = select_lambda(&data, &spec, &grid, &protocol)?;
            eprintln!("{token}: selected lambda {}", sel.lambda);
            spec.lambda = sel.lambda;
        }
        lambdas.push(Some(spec.lambda));
        models.push(NamedModel::transition(token.clone(), spec));
    }
    let cmp = compare_models(&data, &models, &protocol)?;
    let file = std::fs::File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    cmp.write_csv(file)?;
    println!("model mean_rps mean_brier mean_log failures");
    for s in &cmp.summary {
        println!(
            "{} {:.6} {:.6} {:.6} {}",
            s.model, s.mean_rps, s.mean_brier, s.mean_log, s.failures
        );
    }
    let mut warnings = Vec::new();
    if cmp.excluded > 0 {
        warnings.push(format!(
            "{} of {} replications excluded: at least one model failed",
            cmp.excluded, protocol.replications
        ));
    }
    let mut outputs: Vec<&Path> = vec![&args.output];
    if let Some(path) = &args.summary {
        let summary = CompareSummary {
            models: cmp
                .summary
                .iter()
                .zip(&lambdas)
                .map(|(s, l)| SummaryRow {
                    model: &s.model,
                    lambda: *l,
                    mean_rps: s.mean_rps,
                    mean_brier: s.mean_brier,
                    mean_log: s.mean_log,
                    failures: s.failures,
                })
                .collect(),
            excluded_replications: cmp.excluded,
        };
        std::fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path);
    }
    let mut manifest = RunManifest::new("compare", &args, Some(protocol.seed), jobs)?;
    record_inputs(&mut manifest, &args.data)?;
    manifest.finish(&outputs)?;
    Ok(Status::from_warnings(&warnings))
}

pub fn simulate(args: SimulateArgs, jobs: Option<usize>) -> Result<Status> {
    let family = match args.family {
        FamilyArg::Poisson => SimFamily::Poisson { mu: args.mu },
        FamilyArg::Negbin => SimFamily::NegBin {
            nu: args.nu.context("--family negbin requires --nu")?,
            mu: args.mu,
        },
    };
    let config = SimConfig {
        family,
        n: args.n,
        replications: args.reps,
        seed: args.seed,
    };
    config.validate()?;
    let spec = TransitionSpec {
        smoother: match args.smoother {
            SmootherArg::Psplines => Smoother::PSplines {
                num_basis: None,
                degree: 3,
                order: args.order,
            },
            SmootherArg::ThetaQuadratic => Smoother::ThetaQuadratic,
        },
        lambda: args.lambda,
        ..Default::default()
    };
    spec.validate()?;
    let choice = match args.lambda_method {
        LambdaMethod::Fixed => LambdaChoice::Fixed { lambda: args.lambda },
        LambdaMethod::Aic => LambdaChoice::Aic,
        LambdaMethod::Resampling => LambdaChoice::Resampling {
            replications: args.inner_reps,
        },
    };
    let result = flexibility_study(&config, &spec, choice)?;
    let file = std::fs::File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    result.write_csv(file)?;
    println!("max |avg transition - true| {:.6}", result.max_gap_transition());
    println!("max |avg family - true| {:.6}", result.max_gap_family());
    let mut warnings = Vec::new();
    if result.failures > 0 {
        warnings.push(format!("{} of {} replications failed", result.failures, args.reps));
    }
    let manifest = RunManifest::new("simulate", &args, Some(args.seed), jobs)?;
    manifest.finish(&[&args.output])?;
    Ok(Status::from_warnings(&warnings))
}
