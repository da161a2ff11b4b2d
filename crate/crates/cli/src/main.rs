use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use d3po_cli::{router, ServeContext};
use d3po_core::diff::{Checkpoint, Mlp, Module};
use d3po_core::metrics::{evaluate_front, evaluation_preferences, welch_holm, Comparison, Direction, FrontEvaluation};
use d3po_core::momdp::enumerate_true_front;
use d3po_core::trainer::{init_agent, load_policy, train_with, TrainConfig};
use d3po_core::{EnvConfig, Error, Result, WeightingMode};

#[derive(Parser)]
#[command(name = "d3po", version, about = "Preference-conditioned multi-objective PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy for all preferences.
    Train(TrainArgs),
    /// Sweep preferences with a checkpoint and score the resulting front.
    Eval(EvalArgs),
    /// Welch tests with Holm and Bonferroni corrections over metrics files.
    Stats(StatsArgs),
    /// Weighting mode x diversity grid over several seeds.
    Ablate(AblateArgs),
    /// Print an environment's spec and, when finite, its exact front.
    Describe {
        #[arg(long)]
        env: String,
    },
    /// Print actor and critic parameter counts.
    Params {
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "64,64")]
        hidden: String,
    },
    /// Serve a checkpoint as a live, steerable rollout.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct TrainOverrides {
    /// Environment name.
    #[arg(long)]
    env: Option<String>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// lsw, mvs or es.
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long = "lambda-div")]
    lambda_div: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "sigma-distractor")]
    sigma_distractor: Option<f64>,
    /// Disable the diversity regularizer.
    #[arg(long = "no-diversity")]
    no_diversity: bool,
    /// Plain-text key=value config file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: TrainOverrides,
    #[arg(long)]
    out: PathBuf,
    /// Print progress every N iterations (0 = silent).
    #[arg(long, default_value_t = 10)]
    progress: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Defaults to the environment stored in the checkpoint.
    #[arg(long)]
    env: Option<String>,
    #[arg(long = "n-prefs", default_value_t = 101)]
    n_prefs: usize,
    #[arg(long, default_value_t = 5)]
    episodes: usize,
    /// Hypervolume reference point, comma separated.
    #[arg(long = "ref")]
    reference: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Method label recorded in metrics.json.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args)]
struct StatsArgs {
    /// metrics.json files.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Method every other method is compared against.
    #[arg(long, default_value = "lsw+div")]
    baseline: String,
    #[arg(long, default_value = "hv,sp,eu")]
    metrics: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    cfg: TrainOverrides,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value = "lsw,mvs,es")]
    modes: String,
    /// Diversity settings to sweep: on, off or both.
    #[arg(long, default_value = "on,off")]
    diversity: String,
    #[arg(long = "n-prefs", default_value_t = 101)]
    n_prefs: usize,
    #[arg(long, default_value_t = 5)]
    episodes: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    env: Option<String>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory of static UI assets.
    #[arg(long)]
    assets: Option<PathBuf>,
}

fn build_config(o: &TrainOverrides) -> Result<TrainConfig> {
    let mut cfg = match &o.config {
        Some(p) => TrainConfig::from_text(&fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(env) = &o.env {
        if env != cfg.env.name() {
            cfg.env = EnvConfig::by_name(env)?;
        }
    }
    if let Some(v) = o.steps {
        cfg.total_steps = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.weighting {
        cfg.weighting = v.parse()?;
    }
    if let Some(v) = o.lambda_div {
        cfg.lambda_div = v;
    }
    if let Some(v) = o.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = o.sigma_distractor {
        cfg.sigma_distractor = v;
    }
    if o.no_diversity {
        cfg.diversity = false;
    }
    for kv in &o.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn method_label(cfg: &TrainConfig) -> String {
    format!("{}{}", cfg.weighting, if cfg.diversity_active() { "+div" } else { "-div" })
}

fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("not a number: {v:?}")))
        })
        .collect()
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = build_config(&a.cfg)?;
    println!(
        "training {} on {} for {} steps (seed {}, config {})",
        method_label(&cfg),
        cfg.env.name(),
        cfg.total_steps,
        cfg.seed,
        &cfg.hash()[..12]
    );
    let every = a.progress;
    let outcome = train_with(&cfg, &a.out, |rec| {
        if every > 0 && rec.iteration % every == 0 {
            let ret: Vec<String> = rec.episode_return.iter().map(|r| format!("{r:.3}")).collect();
            println!(
                "iter {:>5} steps {:>8} episodes {:>4} return [{}] actor {:+.4} critic {:.4} kl {:.4}",
                rec.iteration,
                rec.steps,
                rec.episodes,
                ret.join(", "),
                rec.actor_loss,
                rec.critic_loss,
                rec.mean_kl
            );
        }
    })?;
    if outcome.aborted {
        eprintln!("run aborted on a non-finite loss; last good state was checkpointed");
    }
    for p in &outcome.checkpoints {
        println!("checkpoint {}", p.display());
    }
    if outcome.aborted {
        return Err(Error::NonFinite("training aborted".into()));
    }
    Ok(())
}

fn run_eval(
    ckpt_path: &Path,
    env_name: Option<&str>,
    n_prefs: usize,
    episodes: usize,
    reference: Option<&str>,
    out: &Path,
    label: Option<&str>,
) -> Result<FrontEvaluation> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (policy, cfg) = load_policy(&ckpt)?;
    let env_cfg = match env_name {
        Some(n) if n != cfg.env.name() => EnvConfig::by_name(n)?,
        _ => cfg.env.clone(),
    };
    let mut env = env_cfg.build()?;
    policy.check_compatible(env.spec())?;
    let spec = env.spec().clone();
    let reference = match reference {
        Some(r) => parse_vector(r)?,
        None => spec.reference_point.clone(),
    };
    if reference.len() != spec.objectives {
        return Err(Error::Config("reference point dimension mismatch".into()));
    }
    let prefs = evaluation_preferences(spec.objectives, n_prefs);
    let ev = evaluate_front(&policy, env.as_mut(), &prefs, episodes, spec.gamma_eval, &reference)?;
    if ev.below_reference > 0 {
        eprintln!(
            "warning: {} front point(s) do not dominate the reference point and add no volume",
            ev.below_reference
        );
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("front.csv"), ev.to_csv())?;
    let echo = serde_json::json!({
        "ckpt": ckpt_path.display().to_string(),
        "env": spec.name,
        "n_prefs": prefs.len(),
        "episodes": episodes,
        "gamma_eval": spec.gamma_eval,
        "train": cfg.entries().into_iter().collect::<BTreeMap<_, _>>(),
    });
    let mut metrics = ev.metrics_json(echo);
    metrics["method"] = serde_json::json!(label.map(str::to_string).unwrap_or_else(|| method_label(&cfg)));
    metrics["seed"] = serde_json::json!(cfg.seed);
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    Ok(ev)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ev = run_eval(
        &a.ckpt,
        a.env.as_deref(),
        a.n_prefs,
        a.episodes,
        a.reference.as_deref(),
        &a.out,
        a.label.as_deref(),
    )?;
    println!(
        "hv {:.6} sp {:.6}{} eu {:.6} front points {} of {}",
        ev.hv,
        ev.sp,
        if ev.sp_degenerate { "*" } else { "" },
        ev.eu,
        ev.front.points.len(),
        ev.rows.len()
    );
    Ok(())
}

/// `(method, seed, metrics object)` per input file.
fn load_metrics(files: &[PathBuf]) -> Result<Vec<(String, serde_json::Value)>> {
    files
        .iter()
        .map(|p| {
            let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p)?)?;
            let method = v["method"]
                .as_str()
                .ok_or_else(|| Error::Config(format!("{}: missing method", p.display())))?
                .to_string();
            Ok((method, v))
        })
        .collect()
}

fn stat_report(rows: &[(String, serde_json::Value)], baseline: &str, metrics: &str, alpha: f64) -> Result<d3po_core::metrics::StatReport> {
    let mut groups: BTreeMap<&str, Vec<&serde_json::Value>> = BTreeMap::new();
    for (m, v) in rows {
        groups.entry(m.as_str()).or_default().push(v);
    }
    let base = groups
        .get(baseline)
        .ok_or_else(|| Error::Config(format!("no runs for baseline method {baseline:?}")))?;
    let values = |g: &[&serde_json::Value], key: &str| -> Result<Vec<f64>> {
        g.iter()
            .map(|v| v[key].as_f64().ok_or_else(|| Error::Config(format!("metric {key} missing"))))
            .collect()
    };
    let mut comparisons = Vec::new();
    for metric in metrics.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        let direction = match metric {
            "sp" => Direction::Less,
            "hv" | "eu" => Direction::Greater,
            other => return Err(Error::Config(format!("unknown metric {other:?}"))),
        };
        for (m, g) in &groups {
            if *m == baseline {
                continue;
            }
            comparisons.push(Comparison {
                name: format!("{baseline} vs {m} [{metric}]"),
                a: values(base, metric)?,
                b: values(g, metric)?,
                direction,
            });
        }
    }
    welch_holm(&comparisons, alpha)
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let rows = load_metrics(&a.files)?;
    let report = stat_report(&rows, &a.baseline, &a.metrics, a.alpha)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let base = build_config(&a.cfg)?;
    let modes: Vec<WeightingMode> = a.modes.split(',').map(|m| m.parse()).collect::<Result<_>>()?;
    let diversity: Vec<bool> = a
        .diversity
        .split(',')
        .map(|d| match d.trim() {
            "on" => Ok(true),
            "off" => Ok(false),
            other => Err(Error::Config(format!("diversity setting {other:?} is not on/off"))),
        })
        .collect::<Result<_>>()?;
    let mut metric_files = Vec::new();
    for &mode in &modes {
        for &div in &diversity {
            for seed in 0..a.seeds {
                let mut cfg = base.clone();
                cfg.weighting = mode;
                cfg.diversity = div;
                cfg.seed = base.seed + seed;
                let label = method_label(&cfg);
                let dir = a.out.join(&label).join(format!("seed_{}", cfg.seed));
                println!("== {label} seed {}", cfg.seed);
                let outcome = train_with(&cfg, &dir, |_| {})?;
                let last = outcome
                    .checkpoints
                    .last()
                    .ok_or_else(|| Error::Checkpoint("no checkpoint written".into()))?;
                let ev = run_eval(last, None, a.n_prefs, a.episodes, None, &dir, Some(&label))?;
                println!("   hv {:.4} sp {:.4} eu {:.4}", ev.hv, ev.sp, ev.eu);
                metric_files.push(dir.join("metrics.json"));
            }
        }
    }
    let rows = load_metrics(&metric_files)?;
    let mut summary = String::new();
    let mut by_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (m, v) in &rows {
        by_method.entry(m).or_default().push(v["hv"].as_f64().unwrap_or(f64::NAN));
    }
    for (m, hv) in &by_method {
        let mut s = hv.clone();
        s.sort_by(f64::total_cmp);
        summary.push_str(&format!("{m:<10} median hv {:.4} over {} seeds\n", s[s.len() / 2], s.len()));
    }
    let baseline = method_label(&TrainConfig {
        weighting: modes[0],
        diversity: diversity[0],
        ..base.clone()
    });
    if by_method.len() > 1 && a.seeds >= 2 {
        let report = stat_report(&rows, &baseline, "hv,sp,eu", 0.05)?;
        summary.push('\n');
        summary.push_str(&report.to_table());
        fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    fs::write(a.out.join("report.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_describe(env: &str) -> Result<()> {
    let env = EnvConfig::by_name(env)?.build()?;
    println!("{}", env.spec());
    match enumerate_true_front(env.as_ref()) {
        Ok(front) => {
            println!("exact_front ({} points):", front.len());
            for p in front {
                let cells: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
                println!("  {}", cells.join(", "));
            }
        }
        Err(Error::Unsupported(_)) => println!("exact_front: not enumerable"),
        Err(e) => return Err(e),
    }
    Ok(())
}

fn cmd_params(env: &str, hidden: &str) -> Result<()> {
    let mut cfg = TrainConfig::for_env(env)?;
    cfg.set("hidden", hidden)?;
    let probe = cfg.env.build()?;
    let spec = probe.spec();
    let agent = init_agent(&cfg)?;
    let input = spec.obs_dim + spec.objectives;
    let mut aw = vec![input];
    aw.extend(&cfg.hidden);
    aw.push(spec.action.head_width());
    let mut cw = vec![input];
    cw.extend(&cfg.hidden);
    cw.push(spec.objectives);
    let extra = agent.actor.log_std.as_ref().map_or(0, |t| t.len());
    println!("actor  {} (closed form {} + log_std {extra})", agent.actor.param_count(), Mlp::closed_form_count(&aw));
    println!("critic {} (closed form {})", agent.critic.param_count(), Mlp::closed_form_count(&cw));
    println!("total  {}", agent.actor.param_count() + agent.critic.param_count());
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let (policy, cfg) = load_policy(&ckpt)?;
    let env = match a.env.as_deref() {
        Some(n) if n != cfg.env.name() => EnvConfig::by_name(n)?,
        _ => cfg.env.clone(),
    };
    let ctx = ServeContext::new(policy, env, a.ckpt.display().to_string(), a.assets.clone())?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|_| Error::Config(format!("bad address {}:{}", a.host, a.port)))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("serving {} on http://{}", a.ckpt.display(), listener.local_addr()?);
        axum::serve(listener, router(Arc::new(ctx))).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Describe { env } => cmd_describe(env),
        Command::Params { env, hidden } => cmd_params(env, hidden),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
