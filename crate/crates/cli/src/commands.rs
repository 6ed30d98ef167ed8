use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kyle_marl::diagnostics::{full_report, write_report_csv, ReportRow};
use kyle_marl::env::trace::{read_traces_csv, write_traces_csv, EpisodeSeries};
use kyle_marl::env::run_episodes;
use kyle_marl::exec::{optimal_schedule, ImpactPath};
use kyle_marl::ppo::{retrain_single, train_marl, GaussianPolicy, PolicySet, Role};
use kyle_marl::strategies::{evaluate_strategy, kyle_for_game, write_comparison_csv, ComparisonRow, StrategyKind};
use kyle_marl::{ResetMode, Variant};

use crate::config::ExperimentConfig;
use crate::plot::{distinct, Chart};
use crate::run::{manifest_hash_of, write_atomic, RunDir};

pub struct Session {
    pub cfg: ExperimentConfig,
    pub out_root: PathBuf,
    pub command_line: String,
}

impl Session {
    fn open(&self) -> Result<RunDir> {
        RunDir::open(&self.out_root, &self.cfg, &self.command_line)
    }
}

fn announce(path: &Path) {
    println!("{}", path.display());
}

pub fn solve_kyle(ctx: &Session) -> Result<()> {
    let eq = kyle_for_game(&ctx.cfg.game).context("Kyle equilibrium solver")?;
    let run = ctx.open()?;
    let path = run.sub("reports").join("kyle_equilibrium.csv");
    write_atomic(&path, |buf| Ok(eq.write_csv(buf, &run.hash)?))?;
    announce(&path);
    Ok(())
}

pub fn solve_exec(ctx: &Session) -> Result<()> {
    let g = &ctx.cfg.game;
    let eq = kyle_for_game(g).context("Kyle equilibrium solver")?;
    let mut path = ImpactPath::new(
        eq.lambda.iter().map(|l| l * g.analytical_lambda_scale).collect(),
        g.mean_reversion,
        g.risk_aversion,
    );
    path.sigma_u_sq = g.noise_std().powi(2);
    let schedule = optimal_schedule(&path, g.target_inventory, g.horizon).context("execution solver")?;
    let run = ctx.open()?;
    let out = run.sub("reports").join("exec_schedule.csv");
    write_atomic(&out, |buf| Ok(schedule.write_csv(buf, &run.hash)?))?;
    announce(&out);
    Ok(())
}

pub fn train(ctx: &Session, episodes: Option<usize>) -> Result<()> {
    let mut ppo = ctx.cfg.ppo.clone();
    if let Some(e) = episodes {
        ppo.total_episodes = e;
    }
    let run = ctx.open()?;
    let ckpt = run.sub("checkpoints");
    let outcome = train_marl(&ctx.cfg.game, &ppo, Some(&ckpt)).context("training")?;
    let curve = run.sub("reports").join("learning_curve.csv");
    write_atomic(&curve, |buf| Ok(outcome.curve.write_csv(buf, &run.hash)?))?;
    announce(&ckpt);
    announce(&curve);
    if outcome.policies.liquidity.is_some() {
        let single = retrain_single(&outcome.policies, Role::Liquidity, &ctx.cfg.game, &ppo).context("single-agent retraining")?;
        let dir = ckpt.join("single");
        fs::create_dir_all(&dir)?;
        let lt = single.policies.liquidity.as_ref().expect("liquidity role present");
        lt.save(&dir.join("liquidity.json"))?;
        let path = run.sub("reports").join("learning_curve_single.csv");
        write_atomic(&path, |buf| Ok(single.curve.write_csv(buf, &run.hash)?))?;
        announce(&path);
    }
    Ok(())
}

fn load_policies(run: &RunDir, checkpoints: Option<&Path>, cfg: &ExperimentConfig) -> Result<(PathBuf, PolicySet)> {
    let dir = checkpoints.map_or_else(|| run.sub("checkpoints"), Path::to_path_buf);
    let set = PolicySet::load_dir(&dir, cfg.game.num_market_makers)
        .with_context(|| format!("loading checkpoints from {} (run `train` first)", dir.display()))?;
    set.check_dims(&cfg.game)
        .with_context(|| format!("checkpoints in {} do not match the config", dir.display()))?;
    Ok((dir, set))
}

fn modes(mode: Option<ResetMode>) -> Vec<ResetMode> {
    mode.map_or_else(|| vec![ResetMode::EvalDown, ResetMode::EvalUp], |m| vec![m])
}

fn report_row(cfg: &ExperimentConfig, mode: &str, series: &[EpisodeSeries]) -> Result<ReportRow> {
    Ok(ReportRow {
        act_type: cfg.game.policy_param.label().to_string(),
        n_mm: cfg.game.num_market_makers,
        lob: cfg.game.lob_mode.flag(),
        mode: mode.to_string(),
        report: full_report(series)?,
    })
}

pub fn evaluate(ctx: &Session, mode: Option<ResetMode>, episodes: Option<usize>, checkpoints: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    let episodes = episodes.unwrap_or(cfg.evaluation.episodes);
    let run = RunDir::path_for(&ctx.out_root, cfg);
    let (_, policies) = load_policies(&run, checkpoints, cfg)?;
    let run = ctx.open()?;
    for m in modes(mode) {
        let traces = run_episodes(&cfg.eval_game(), &policies, m, episodes)?;
        let path = run.sub("traces").join(format!("eval_{}.csv", m.label()));
        write_atomic(&path, |buf| Ok(write_traces_csv(buf, &traces, &run.hash)?))?;
        announce(&path);
        let series: Vec<EpisodeSeries> = traces.iter().map(|t| t.series()).collect();
        let row = report_row(cfg, m.label(), &series)?;
        let path = run.sub("reports").join(format!("discovery_{}.csv", m.label()));
        write_atomic(&path, |buf| Ok(write_report_csv(buf, &[row], &run.hash)?))?;
        announce(&path);
    }
    Ok(())
}

pub fn compare(ctx: &Session, mode: Option<ResetMode>, episodes: Option<usize>, checkpoints: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.game.variant != Variant::FullGame {
        bail!("compare needs game.variant = \"full_game\"");
    }
    let episodes = episodes.unwrap_or(cfg.evaluation.episodes);
    let run = RunDir::path_for(&ctx.out_root, cfg);
    let (dir, policies) = load_policies(&run, checkpoints, cfg)?;
    let single_path = dir.join("single").join("liquidity.json");
    let single = if single_path.exists() {
        Some(GaussianPolicy::load(&single_path)?)
    } else {
        eprintln!("warning: {} not found; skipping the single-agent strategy", single_path.display());
        None
    };
    let run = ctx.open()?;
    let game = cfg.eval_game();
    let mut rows = Vec::new();
    for m in modes(mode) {
        for kind in StrategyKind::ALL {
            if kind == StrategyKind::PpoSingle && single.is_none() {
                continue;
            }
            let ev = evaluate_strategy(kind, &policies, single.as_ref(), &game, m, episodes)
                .with_context(|| format!("strategy {} in mode {}", kind.label(), m.label()))?;
            let path = run.sub("traces").join(format!("compare_{}_{}.csv", m.label(), kind.label()));
            write_atomic(&path, |buf| Ok(write_traces_csv(buf, &ev.traces, &run.hash)?))?;
            rows.push(ComparisonRow {
                act_type: cfg.game.policy_param.label().to_string(),
                lob: cfg.game.lob_mode.flag(),
                phi: cfg.game.risk_aversion,
                mode: m.label().to_string(),
                strategy: kind,
                report: ev.report,
            });
        }
    }
    let path = run.sub("reports").join("compare.csv");
    write_atomic(&path, |buf| Ok(write_comparison_csv(buf, &rows, &run.hash)?))?;
    announce(&path);
    Ok(())
}

fn trace_inputs(explicit: &[PathBuf], dir: Option<&Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    if !explicit.is_empty() {
        return Ok(explicit.to_vec());
    }
    let Some(dir) = dir else {
        bail!("no trace files given");
    };
    let mut found: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|e| e == "csv")
                    && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    if found.is_empty() {
        bail!("no trace CSVs found in {}", dir.display());
    }
    found.sort();
    Ok(found)
}

fn read_series(path: &Path) -> Result<(String, Vec<EpisodeSeries>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let hash = manifest_hash_of(&text).unwrap_or_default();
    let series = read_traces_csv(text.as_bytes()).with_context(|| format!("parsing {}", path.display()))?;
    Ok((hash, series))
}

/// `down` or `up` when every episode opens on the same side of its fundamental.
fn infer_mode(series: &[EpisodeSeries]) -> &'static str {
    if series.iter().all(|s| s.open_price < s.fundamental) {
        "down"
    } else if series.iter().all(|s| s.open_price > s.fundamental) {
        "up"
    } else {
        "mixed"
    }
}

pub fn diagnose(ctx: &Session, traces: &[PathBuf]) -> Result<()> {
    let run = RunDir::path_for(&ctx.out_root, &ctx.cfg);
    let inputs = trace_inputs(traces, Some(&run.sub("traces")), "eval_")?;
    let mut rows = Vec::new();
    for p in &inputs {
        let (_, series) = read_series(p)?;
        rows.push(report_row(&ctx.cfg, infer_mode(&series), &series).with_context(|| format!("diagnosing {}", p.display()))?);
    }
    let run = ctx.open()?;
    let path = run.sub("reports").join("diagnostics.csv");
    write_atomic(&path, |buf| Ok(write_report_csv(buf, &rows, &run.hash)?))?;
    announce(&path);
    Ok(())
}

fn figure_dir(trace: &Path) -> PathBuf {
    let parent = trace.parent().unwrap_or(Path::new("."));
    match (parent.file_name(), parent.parent()) {
        (Some(n), Some(run)) if n == "traces" => run.join("figures"),
        _ => parent.to_path_buf(),
    }
}

pub fn plot(cfg_run: Option<RunDir>, traces: &[PathBuf]) -> Result<()> {
    let dir = cfg_run.as_ref().map(|r| r.sub("traces"));
    let inputs = trace_inputs(traces, dir.as_deref(), "")?;
    let mut loaded = Vec::new();
    for p in &inputs {
        loaded.push((p.clone(), read_series(p)?));
    }
    for (path, (hash, series)) in loaded {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace").to_string();
        let out_dir = figure_dir(&path);
        fs::create_dir_all(&out_dir)?;
        let price = Chart {
            title: &format!("Price paths ({stem}, {} episodes)", series.len()),
            x_label: "step",
            y_label: "price (cents)",
            manifest_hash: &hash,
            series: series.iter().map(EpisodeSeries::price_path).collect(),
            references: distinct(series.iter().map(|s| s.fundamental)),
        };
        let out = out_dir.join(format!("{stem}_price.svg"));
        write_atomic(&out, |buf| {
            buf.extend_from_slice(price.render().as_bytes());
            Ok(())
        })?;
        announce(&out);
        let inventories: Option<Vec<Vec<f64>>> = series.iter().map(|s| s.inventory.clone()).collect();
        if let Some(inv) = inventories {
            let start: Vec<f64> = series
                .iter()
                .zip(&inv)
                .map(|(s, q)| q.first().copied().unwrap_or(0.0) + s.liquidity.as_ref().and_then(|l| l.first().copied()).unwrap_or(0.0))
                .collect();
            let chart = Chart {
                title: &format!("Remaining inventory ({stem})"),
                x_label: "step",
                y_label: "units",
                manifest_hash: &hash,
                series: inv.iter().zip(&start).map(|(q, s)| std::iter::once(*s).chain(q.iter().copied()).collect()).collect(),
                references: Vec::new(),
            };
            let out = out_dir.join(format!("{stem}_inventory.svg"));
            write_atomic(&out, |buf| {
                buf.extend_from_slice(chart.render().as_bytes());
                Ok(())
            })?;
            announce(&out);
        }
    }
    Ok(())
}
