use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rxlearn::config::RunConfig;
use rxlearn::data::{
    apply_semi_synthetic_dgp, generate_1d_qualitative, generate_synthetic, load_dataset_csv,
    load_features_csv, save_dataset_csv, surrogate_covariates, FeatureMatrix,
};
use rxlearn::evaluation::{
    benchmark_learners, contamination_sweep, emit_curve_data, fit_response_curves, run_scenario,
    run_semi_synthetic, smearing_study, write_json, write_reports_csv, write_smear_csv, EvalReport,
    NamedLearner,
};
use rxlearn::metalearners::{fit_meta, load_bundle, predict_cate, save_bundle};
use rxlearn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "rxlearn",
    version,
    about = "Robust X-Learner benchmarks and CATE fitting"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a shipped preset.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (default: the config's out_dir, else ./out).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the [scenario] table.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Apply the semi-synthetic outcome model to a covariate CSV.
    Semisynthetic {
        /// Covariate CSV (header row, numeric columns). Falls back to the
        /// config's `covariates`, then to a generated surrogate.
        #[arg(long)]
        covariates: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fit one meta-learner on a dataset CSV and save the model bundle.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Learner name from the config (default: `rx`, else the first listed).
        #[arg(long)]
        learner: Option<String>,
        #[arg(long)]
        model_out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Predict per-unit effects with a saved bundle.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Dataset or plain feature CSV.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated-trial evaluation of every configured learner.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Evaluation at each contamination rate of the [sweep] table.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Single-outlier smearing study.
    Smear {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Export 1-D curve data for plotting.
    Curves {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let cfg = match (&args.config, &args.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => {
            return Err(Error::Validation(
                "one of --config or --preset is required".into(),
            ))
        }
    };
    Ok(cfg.with_seed(args.seed))
}

fn out_dir(args: &ConfigArgs, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn say(path: &Path) {
    println!("wrote {}", path.display());
}

fn print_report(rep: &EvalReport) {
    let rate = rep.rate.map(|r| format!(" rate={r}")).unwrap_or_default();
    println!("{}{rate}", rep.scenario);
    for s in &rep.aggregated {
        let core = s
            .core_pehe
            .map(|c| {
                format!(
                    "  core_pehe {:.4} ± {:.4} (median {:.4})",
                    c.mean, c.sd, c.median
                )
            })
            .unwrap_or_default();
        println!(
            "  {:<14} pehe {:.4} ± {:.4}{core}  ate_bias {:.4}  failures {}",
            s.learner, s.pehe.mean, s.pehe.sd, s.ate_bias.mean, s.failures
        );
    }
}

fn write_reports(reports: &[EvalReport], dir: &Path, stem: &str, format: Format) -> Result<()> {
    let path = match format {
        Format::Csv => {
            let p = dir.join(format!("{stem}.csv"));
            write_reports_csv(reports, &p)?;
            p
        }
        Format::Json => {
            let p = dir.join(format!("{stem}.json"));
            write_json(&reports, &p)?;
            p
        }
    };
    say(&path);
    let summary: Vec<_> = reports.iter().map(EvalReport::summary).collect();
    let p = dir.join(format!("{stem}_summary.json"));
    write_json(&summary, &p)?;
    say(&p);
    Ok(())
}

fn covariates_for(cfg: &RunConfig, flag: Option<&PathBuf>) -> Result<FeatureMatrix> {
    let semi = cfg.semi_synthetic()?;
    match flag.or(semi.covariates.as_ref()) {
        Some(path) => load_features_csv(path),
        None => surrogate_covariates(semi.surrogate_rows, semi.surrogate_cols, semi.dgp.seed),
    }
}

fn pick_learner(learners: Vec<NamedLearner>, name: Option<&str>) -> Result<NamedLearner> {
    let wanted = name.unwrap_or("rx");
    let names: Vec<String> = learners.iter().map(|l| l.name.clone()).collect();
    let first = learners.first().cloned();
    match learners.into_iter().find(|l| l.name == wanted) {
        Some(l) => Ok(l),
        None if name.is_none() => {
            first.ok_or_else(|| Error::Config(vec!["no learners configured".into()]))
        }
        None => Err(Error::Config(vec![format!(
            "learner `{wanted}` not found; configured: {}",
            names.join(", ")
        )])),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { cfg: args } => {
            let cfg = load_config(&args)?;
            let data = generate_synthetic(&cfg.scenario()?)?;
            let p = out_dir(&args, &cfg)?.join("dataset.csv");
            save_dataset_csv(&data, &p)?;
            say(&p);
        }
        Command::Semisynthetic {
            covariates,
            cfg: args,
        } => {
            let cfg = load_config(&args)?;
            let x = covariates_for(&cfg, covariates.as_ref())?;
            let data = apply_semi_synthetic_dgp(&x, &cfg.semi_synthetic()?.dgp)?;
            let p = out_dir(&args, &cfg)?.join("semi_synthetic.csv");
            save_dataset_csv(&data, &p)?;
            say(&p);
        }
        Command::Fit {
            data,
            learner,
            model_out,
            cfg: args,
        } => {
            let learners = if args.config.is_some() || args.preset.is_some() {
                load_config(&args)?.learners()?
            } else {
                benchmark_learners(Default::default())
            };
            let l = pick_learner(learners, learner.as_deref())?;
            let d = load_dataset_csv(&data)?;
            let model = fit_meta(&d, &l.spec)?;
            save_bundle(&model, &model_out)?;
            println!(
                "fitted {} on {} units ({} treated)",
                l.name,
                d.len(),
                d.n_treated()
            );
            say(&model_out);
        }
        Command::Predict { model, data, out } => {
            let m = load_bundle(&model)?;
            let x = match load_dataset_csv(&data) {
                Ok(d) => d.features,
                Err(Error::MissingColumn { .. }) => load_features_csv(&data)?,
                Err(e) => return Err(e),
            };
            let tau = predict_cate(&m, &x)?;
            let mut text = String::from("row,tau_hat\n");
            for (i, t) in tau.iter().enumerate() {
                text.push_str(&format!("{i},{t}\n"));
            }
            std::fs::write(&out, text).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            say(&out);
        }
        Command::Evaluate { cfg: args, format } => {
            let cfg = load_config(&args)?;
            let learners = cfg.learners()?;
            let mut rep = if cfg.scenario.is_some() {
                run_scenario(&cfg.scenario()?, &learners, cfg.trials)?
            } else if cfg.semi_synthetic.is_some() {
                let x = covariates_for(&cfg, None)?;
                run_semi_synthetic(&x, &cfg.semi_synthetic()?.dgp, &learners, cfg.trials)?
            } else {
                return Err(Error::Config(vec![
                    "evaluate needs a [scenario] or [semi_synthetic] table".into(),
                ]));
            };
            if !cfg.name.is_empty() {
                rep.scenario = cfg.name.clone();
            }
            print_report(&rep);
            write_reports(&[rep], &out_dir(&args, &cfg)?, "report", format)?;
        }
        Command::Sweep { cfg: args, format } => {
            let cfg = load_config(&args)?;
            let rates = &cfg
                .sweep
                .as_ref()
                .ok_or_else(|| Error::Config(vec!["missing [sweep] table".into()]))?
                .rates;
            let res = contamination_sweep(&cfg.scenario()?, rates, &cfg.learners()?, cfg.trials)?;
            for r in &res.reports {
                print_report(r);
            }
            let dir = out_dir(&args, &cfg)?;
            write_reports(&res.reports, &dir, "sweep", format)?;
            let mut table = String::from("rate,learner,mean_pehe,mean_core_pehe\n");
            for r in &res.table {
                let core = r.mean_core_pehe.map(|c| c.to_string()).unwrap_or_default();
                table.push_str(&format!(
                    "{},{},{},{core}\n",
                    r.rate, r.learner, r.mean_pehe
                ));
            }
            let p = dir.join("sweep_table.csv");
            std::fs::write(&p, table).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            say(&p);
        }
        Command::Smear { cfg: args, format } => {
            let cfg = load_config(&args)?;
            let smear = cfg
                .smear
                .as_ref()
                .ok_or_else(|| Error::Config(vec!["missing [smear] table".into()]))?;
            let rep = smearing_study(
                &cfg.scenario()?,
                &smear.magnitudes,
                &cfg.learners()?,
                smear.unit,
            )?;
            println!(
                "smearing: outlier on unit {} ({} treated units)",
                rep.unit_index, rep.n_treated
            );
            for r in &rep.rows {
                println!(
                    "  xi {:>8}  {:<10} shift {:+.4}",
                    r.magnitude, r.learner, r.shift
                );
            }
            let dir = out_dir(&args, &cfg)?;
            let p = match format {
                Format::Csv => {
                    let p = dir.join("smear.csv");
                    write_smear_csv(&rep, &p)?;
                    p
                }
                Format::Json => {
                    let p = dir.join("smear.json");
                    write_json(&rep, &p)?;
                    p
                }
            };
            say(&p);
        }
        Command::Curves { cfg: args } => {
            let cfg = load_config(&args)?;
            let c = cfg
                .curves
                .ok_or_else(|| Error::Config(vec!["missing [curves] table".into()]))?;
            let data = generate_1d_qualitative(c.n, c.outliers, cfg.seed_or(0))?;
            let (mse, rx) = fit_response_curves(&data, &cfg.boost, c.gamma)?;
            let p = out_dir(&args, &cfg)?.join("curves.csv");
            emit_curve_data(&mse, &rx, &data, &p)?;
            say(&p);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
