//! Command-line entry point: one verb per pipeline stage. All artifacts of a
//! run land in a directory named by timestamp and seed under `./runs` (or
//! `$DMSSD_RUN_DIR`), together with the fully-resolved config.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::env::Env;
use crate::error::{Error, Result};
use crate::evalsuite::{
    achieved_fraction, bench_inference, evaluate, mean_steps_taken, optimality_gaps,
    padding_compat, rewards_mean, run_baseline, RewardVariant,
};
use crate::gridmap::{parse_map_text, Coord, GridMap};
use crate::neural::PolicyValueNet;
use crate::ppo::{train, TrainSetup};
use crate::swarm::orchestrate::{orchestrate, OrchestrateConfig, RobotHost};
use crate::swarm::robot::{run_robot, RobotConfig};
use crate::swarm::server::{fetch_model, ModelServer};

#[derive(Parser)]
#[command(name = "dmssd", about = "Multi-robot rendezvous: maps, training, evaluation, deployment")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, repeatable: --set key=value
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Master seed (shorthand for --set seed=N).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("--set expects key=value, got '{kv}'")))?;
            cfg.apply(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a map file.
    GenMap {
        #[arg(long, default_value_t = 50)]
        x: usize,
        #[arg(long, default_value_t = 50)]
        y: usize,
        #[arg(long = "static", default_value_t = 0.05)]
        static_density: f64,
        #[arg(long = "dynamic", default_value_t = 0.02)]
        dynamic_density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy; writes model.bin and metrics.csv into the run dir.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a trained model: episodes, MST, RM, success rate.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Argmax actions instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Optimality gap of greedy episodes against the BFS lower bound.
    Gap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-action inference latency.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a reward variant (ablation row) with a trained model.
    Baseline {
        #[arg(long)]
        model: PathBuf,
        /// ours | ours-nomask | baseline-a | baseline-b | baseline-c
        #[arg(long)]
        variant: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Padding compatibility: success rate at each robot count up to n_p.
    Compat {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Minimum success fraction per count; below it the exit code is 4.
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Serve a model file to robots until killed.
    ServeModel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:0")]
        bind: SocketAddr,
    },
    /// Run one robot loop (normally spawned by orchestrate).
    Robot {
        #[arg(long)]
        id: u32,
        #[arg(long)]
        map: PathBuf,
        /// Start cell as x,y
        #[arg(long)]
        start: String,
        #[arg(long)]
        bind: SocketAddr,
        /// Comma-separated peer endpoints.
        #[arg(long, value_delimiter = ',')]
        peers: Vec<SocketAddr>,
        /// Fetch the model from this server...
        #[arg(long)]
        model_server: Option<SocketAddr>,
        /// ...or load it from a file.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        n_p: usize,
        /// Observation divisor the model was trained with.
        #[arg(long, default_value_t = 100.0)]
        scale: f64,
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
        #[arg(long, default_value_t = 2000)]
        max_ticks: u64,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Spawn a model server plus n robot processes and report the outcome.
    Orchestrate {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 3)]
        n_p: usize,
        /// Observation divisor the model was trained with.
        #[arg(long, default_value_t = 100.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
        #[arg(long, default_value_t = 2000)]
        max_ticks: u64,
        /// Robot executable; defaults to the current binary.
        #[arg(long)]
        exe: Option<PathBuf>,
        /// Fault injection: kill robot INDEX after MS milliseconds, as INDEX:MS.
        #[arg(long)]
        kill: Option<String>,
    },
    /// Extract plot-ready columns from a metrics CSV.
    PlotData {
        #[arg(long)]
        metrics: PathBuf,
        /// Output directory; defaults to the CSV's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse argv and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version are successes; real parse errors are config errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_dir(seed: u64) -> Result<PathBuf> {
    let root = std::env::var_os("DMSSD_RUN_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let mut dir = root.join(format!("{stamp}-seed{seed}"));
    let mut n = 1;
    while dir.exists() {
        dir = root.join(format!("{stamp}-seed{seed}-{n}"));
        n += 1;
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_map(path: &Path) -> Result<GridMap> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read map {}: {e}", path.display())))?;
    let (map, _) = parse_map_text(&text)?;
    Ok(map)
}

fn build_env(cfg: &RunConfig, env_seed: u64) -> Result<Env> {
    let mut env = Env::new(cfg.env.clone(), env_seed)?;
    let (rule, masking) = cfg.variant.rule_and_masking(&cfg.env);
    env.set_reward_rule(rule);
    env.set_masking(masking);
    Ok(env)
}

fn dispatch(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::GenMap { x, y, static_density, dynamic_density, seed, out } => {
            let map = GridMap::generate(x, y, static_density, dynamic_density, seed)?;
            let text = map.to_map_text();
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Cmd::Train { cfg } => {
            let cfg = cfg.resolve()?;
            let dir = run_dir(cfg.seed)?;
            cfg.save(&dir.join("config.txt"))?;
            let mut setup = TrainSetup::new(cfg.env.clone(), cfg.ppo.clone(), cfg.seed);
            let (rule, masking) = cfg.variant.rule_and_masking(&cfg.env);
            setup.reward_rule = rule;
            setup.masking = masking;
            let out = train(&setup, &dir)?;
            let last = out.metrics.last();
            println!(
                "trained {} iterations; final mst={} rm={}; artifacts in {}",
                out.metrics.len(),
                last.and_then(|m| m.mst).map_or("NA".into(), |v| format!("{v:.2}")),
                last.and_then(|m| m.rm).map_or("NA".into(), |v| format!("{v:.2}")),
                dir.display()
            );
            Ok(0)
        }
        Cmd::Eval { model, episodes, greedy, cfg } => {
            let cfg = cfg.resolve()?;
            let net = PolicyValueNet::load(&model)?;
            check_model_fits(&net, &cfg)?;
            let mut env = build_env(&cfg, cfg.seed)?;
            let stats = evaluate(&mut env, &net, episodes, greedy)?;
            let mst = mean_steps_taken(&stats).map_or("NA".into(), |v| format!("{v:.3}"));
            println!(
                "episodes={} success={:.3} mst={} rm={:.3}",
                episodes,
                achieved_fraction(&stats)?,
                mst,
                rewards_mean(&stats)?
            );
            Ok(0)
        }
        Cmd::Gap { model, episodes, cfg } => {
            let cfg = cfg.resolve()?;
            let net = PolicyValueNet::load(&model)?;
            check_model_fits(&net, &cfg)?;
            let mut env = build_env(&cfg, cfg.seed)?;
            let gaps = optimality_gaps(&mut env, &net, episodes, cfg.seed ^ 0x9e3779b9)?;
            let mut achieved: Vec<f64> = gaps.iter().filter_map(|g| g.gap).collect();
            achieved.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = if achieved.is_empty() {
                "NA".to_string()
            } else {
                format!("{}", achieved[achieved.len() / 2])
            };
            println!(
                "episodes={} achieved={} median_gap={} truncated={}",
                episodes,
                achieved.len(),
                median,
                gaps.len() - achieved.len()
            );
            Ok(0)
        }
        Cmd::Bench { model, trials, cfg } => {
            let cfg = cfg.resolve()?;
            let net = PolicyValueNet::load(&model)?;
            let obs = vec![0.01; net.input_dim];
            let (mean_us, p99_us) = bench_inference(&net, &obs, trials)?;
            println!("trials={trials} mean_us={mean_us:.2} p99_us={p99_us:.2}");
            let _ = cfg;
            Ok(0)
        }
        Cmd::Baseline { model, variant, episodes, cfg } => {
            let mut cfg = cfg.resolve()?;
            cfg.variant = RewardVariant::parse(&variant)?;
            let net = PolicyValueNet::load(&model)?;
            check_model_fits(&net, &cfg)?;
            let mut env = Env::new(cfg.env.clone(), cfg.seed)?;
            let stats = run_baseline(&mut env, &net, cfg.variant, episodes)?;
            let mst = mean_steps_taken(&stats).map_or("NA".into(), |v| format!("{v:.3}"));
            println!(
                "variant={} episodes={} success={:.3} mst={} rm={:.3}",
                cfg.variant.name(),
                episodes,
                achieved_fraction(&stats)?,
                mst,
                rewards_mean(&stats)?
            );
            Ok(0)
        }
        Cmd::Compat { model, episodes, threshold, cfg } => {
            let cfg = cfg.resolve()?;
            let net = PolicyValueNet::load(&model)?;
            check_model_fits(&net, &cfg)?;
            let mut env = build_env(&cfg, cfg.seed)?;
            let rows = padding_compat(&mut env, &net, episodes)?;
            let mut ok = true;
            for (count, stats) in &rows {
                let success = achieved_fraction(stats)?;
                println!("robots={count} episodes={} success={success:.3}", stats.len());
                ok &= success >= threshold;
            }
            Ok(if ok { 0 } else { 4 })
        }
        Cmd::ServeModel { model, bind } => {
            let server = ModelServer::start(model, bind)?;
            println!("serving on {}", server.addr());
            // Foreground service: park until killed.
            loop {
                std::thread::sleep(Duration::from_secs(3600));
            }
        }
        Cmd::Robot {
            id,
            map,
            start,
            bind,
            peers,
            model_server,
            model,
            n_p,
            scale,
            tick_ms,
            max_ticks,
            trace,
        } => {
            let map = load_map(&map)?;
            let (sx, sy) = start
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("--start expects x,y, got '{start}'")))?;
            let start = Coord::new(
                sx.trim().parse().map_err(|_| Error::Parse("bad start x".into()))?,
                sy.trim().parse().map_err(|_| Error::Parse("bad start y".into()))?,
            );
            let net = match (model_server, model) {
                (Some(addr), _) => {
                    let ann = fetch_model(addr, None)?;
                    PolicyValueNet::from_bytes(&ann.payload)?
                }
                (None, Some(path)) => PolicyValueNet::load(&path)?,
                (None, None) => {
                    return Err(Error::Config("need --model-server or --model".into()))
                }
            };
            let mut rc = RobotConfig::new(id, map, start, bind);
            rc.peers = peers;
            rc.n_p = n_p;
            rc.coordinate_scale = scale;
            rc.tick_period = Duration::from_millis(tick_ms);
            rc.max_ticks = max_ticks;
            rc.trace_path = trace;
            let report = run_robot(&rc, &net)?;
            print!("{}", report.encode());
            Ok(if report.success { 0 } else { 4 })
        }
        Cmd::Orchestrate { n, map, model, n_p, scale, seed, tick_ms, max_ticks, exe, kill } => {
            let grid = load_map(&map)?;
            let exe = match exe {
                Some(p) => p,
                None => std::env::current_exe()?,
            };
            let kill = match kill {
                None => None,
                Some(s) => {
                    let (i, ms) = s.split_once(':').ok_or_else(|| {
                        Error::Parse(format!("--kill expects INDEX:MS, got '{s}'"))
                    })?;
                    Some((
                        i.parse().map_err(|_| Error::Parse("bad kill index".into()))?,
                        Duration::from_millis(
                            ms.parse().map_err(|_| Error::Parse("bad kill delay".into()))?,
                        ),
                    ))
                }
            };
            let dir = run_dir(seed)?;
            let cfg = OrchestrateConfig {
                n_robots: n,
                map: grid,
                map_path: map,
                model_path: model,
                n_p,
                coordinate_scale: scale,
                seed,
                tick_period: Duration::from_millis(tick_ms),
                max_ticks,
                host: RobotHost::Process { exe },
                kill,
                trace_dir: Some(dir.clone()),
            };
            let report = orchestrate(&cfg)?;
            for r in &report.reports {
                print!("{}", r.encode());
            }
            match report.meeting_cell {
                Some(c) => println!("rendezvous at ({}, {}); traces in {}", c.x, c.y, dir.display()),
                None => println!("no common meeting cell; traces in {}", dir.display()),
            }
            Ok(if report.success { 0 } else { 4 })
        }
        Cmd::PlotData { metrics, out } => {
            let text = std::fs::read_to_string(&metrics)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", metrics.display())))?;
            let dir = out
                .or_else(|| metrics.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            let mut mst = String::from("iteration mst\n");
            let mut rm = String::from("iteration rm\n");
            for line in text.lines().skip(1) {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() < 4 {
                    return Err(Error::Parse(format!("bad metrics row: '{line}'")));
                }
                if cols[2] != "NA" {
                    mst.push_str(&format!("{} {}\n", cols[0], cols[2]));
                }
                if cols[3] != "NA" {
                    rm.push_str(&format!("{} {}\n", cols[0], cols[3]));
                }
            }
            std::fs::write(dir.join("mst.dat"), mst)?;
            std::fs::write(dir.join("rm.dat"), rm)?;
            println!("wrote {} and {}", dir.join("mst.dat").display(), dir.join("rm.dat").display());
            Ok(0)
        }
    }
}

fn check_model_fits(net: &PolicyValueNet, cfg: &RunConfig) -> Result<()> {
    if net.n_p != cfg.env.n_p {
        return Err(Error::Config(format!(
            "model built for n_p = {}, config asks for {}; pass --set n_p={}",
            net.n_p, cfg.env.n_p, net.n_p
        )));
    }
    Ok(())
}
