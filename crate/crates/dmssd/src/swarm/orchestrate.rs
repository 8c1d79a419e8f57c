//! Harness for the deployment mode: spawn the model server and n robot
//! loops, inject faults, collect terminal reports and merge traces.

use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gridmap::{Coord, GridMap};
use crate::neural::PolicyValueNet;
use crate::swarm::robot::{run_robot, RobotConfig, RobotReport};
use crate::swarm::server::ModelServer;

/// How robot loops are hosted.
#[derive(Debug, Clone)]
pub enum RobotHost {
    /// Spawn OS processes running `<exe> robot ...` (the deployment shape).
    Process { exe: PathBuf },
    /// Run each loop on a thread in this process (fast test harness).
    Thread,
}

#[derive(Debug, Clone)]
pub struct OrchestrateConfig {
    pub n_robots: usize,
    pub map: GridMap,
    pub map_path: PathBuf,
    pub model_path: PathBuf,
    pub n_p: usize,
    /// Observation divisor; must match what the model was trained with.
    pub coordinate_scale: f64,
    pub seed: u64,
    pub tick_period: Duration,
    pub max_ticks: u64,
    pub host: RobotHost,
    /// Kill robot `index` roughly after `after` elapses (fault injection).
    pub kill: Option<(usize, Duration)>,
    /// Where merged traces and per-robot trace files go, if anywhere.
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub reports: Vec<RobotReport>,
    /// Common meeting cell over surviving successful robots, if unanimous.
    pub meeting_cell: Option<Coord>,
    pub success: bool,
    pub merged_trace: String,
}

/// Draw mutually reachable free start cells, mirroring env resets.
pub fn sample_starts(map: &GridMap, n: usize, seed: u64) -> Result<Vec<Coord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..64 {
        let first = loop {
            let c = Coord::new(rng.gen_range(0..map.width()), rng.gen_range(0..map.height()));
            if map.is_free(c) {
                break c;
            }
        };
        let mut cells: Vec<Coord> = map
            .component_cells(first)?
            .into_iter()
            .filter(|&c| map.is_free(c))
            .collect();
        if cells.len() < n {
            continue;
        }
        let mut starts = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.gen_range(0..cells.len());
            starts.push(cells.swap_remove(i));
        }
        return Ok(starts);
    }
    Err(Error::MapDegenerate("no feasible start placement".into()))
}

/// Reserve n distinct loopback UDP ports. The sockets are dropped before the
/// robots bind; local reuse races are tolerable for a test harness.
fn reserve_udp_addrs(n: usize) -> Result<Vec<SocketAddr>> {
    let sockets: Vec<UdpSocket> =
        (0..n).map(|_| UdpSocket::bind("127.0.0.1:0")).collect::<std::io::Result<_>>()?;
    sockets.iter().map(|s| Ok(s.local_addr()?)).collect()
}

pub fn orchestrate(cfg: &OrchestrateConfig) -> Result<RunReport> {
    if cfg.n_robots == 0 {
        return Err(Error::Config("orchestrate needs at least one robot".into()));
    }
    if cfg.n_robots > cfg.n_p {
        return Err(Error::Config(format!(
            "{} robots exceed n_p = {}",
            cfg.n_robots, cfg.n_p
        )));
    }
    let starts = sample_starts(&cfg.map, cfg.n_robots, cfg.seed)?;
    let addrs = reserve_udp_addrs(cfg.n_robots)?;
    let server = ModelServer::start(cfg.model_path.clone(), "127.0.0.1:0")?;
    let server_addr = server.addr();

    if let Some(dir) = &cfg.trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let trace_path =
        |i: usize| cfg.trace_dir.as_ref().map(|d| d.join(format!("robot{i}.trace.csv")));

    let killed: Vec<bool> = (0..cfg.n_robots)
        .map(|i| matches!(cfg.kill, Some((k, _)) if k == i))
        .collect();

    let reports = match &cfg.host {
        RobotHost::Thread => run_threaded(cfg, &starts, &addrs, &trace_path)?,
        RobotHost::Process { exe } => {
            run_processes(cfg, exe, &starts, &addrs, server_addr, &trace_path)?
        }
    };
    server.shutdown();

    // Success: every surviving robot ends at the same cell. A robot that
    // reaches the meeting cell but exhausts its ticks before its termination
    // detector fires still rendezvoused; detection is reported per robot.
    let survivors: Vec<&RobotReport> = reports
        .iter()
        .enumerate()
        .filter(|(i, _)| !killed[*i])
        .map(|(_, r)| r)
        .collect();
    let unanimous = !survivors.is_empty()
        && survivors.iter().all(|r| r.cell == survivors[0].cell);
    let meeting_cell = unanimous.then(|| survivors[0].cell);

    let merged_trace = merge_traces(cfg, &trace_path)?;
    if let Some(dir) = &cfg.trace_dir {
        std::fs::write(dir.join("trace.csv"), &merged_trace)?;
    }
    Ok(RunReport { reports, meeting_cell, success: unanimous, merged_trace })
}

fn robot_config(
    cfg: &OrchestrateConfig,
    i: usize,
    starts: &[Coord],
    addrs: &[SocketAddr],
    trace: Option<PathBuf>,
) -> RobotConfig {
    RobotConfig {
        id: i as u32,
        map: cfg.map.clone(),
        start: starts[i],
        bind: addrs[i],
        peers: addrs
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &a)| a)
            .collect(),
        n_p: cfg.n_p,
        coordinate_scale: cfg.coordinate_scale,
        tick_period: cfg.tick_period,
        max_ticks: cfg.max_ticks,
        soft_stale_ticks: 3,
        hard_stale_ticks: 10,
        trace_path: trace,
        stop: None,
    }
}

fn run_threaded(
    cfg: &OrchestrateConfig,
    starts: &[Coord],
    addrs: &[SocketAddr],
    trace_path: &dyn Fn(usize) -> Option<PathBuf>,
) -> Result<Vec<RobotReport>> {
    let net = Arc::new(PolicyValueNet::load(&cfg.model_path)?);
    let mut handles = Vec::new();
    let mut kill_switch: Option<(Arc<AtomicBool>, Duration)> = None;
    for i in 0..cfg.n_robots {
        let mut rc = robot_config(cfg, i, starts, addrs, trace_path(i));
        if let Some((k, after)) = cfg.kill {
            if k == i {
                let flag = Arc::new(AtomicBool::new(false));
                rc.stop = Some(Arc::clone(&flag));
                kill_switch = Some((flag, after));
            }
        }
        let net = Arc::clone(&net);
        handles.push(std::thread::spawn(move || run_robot(&rc, &net)));
    }
    if let Some((flag, after)) = kill_switch {
        std::thread::sleep(after);
        flag.store(true, Ordering::Relaxed);
    }
    let mut reports = Vec::with_capacity(handles.len());
    for h in handles {
        reports.push(h.join().map_err(|_| Error::Runtime("robot thread panicked".into()))??);
    }
    Ok(reports)
}

fn run_processes(
    cfg: &OrchestrateConfig,
    exe: &Path,
    starts: &[Coord],
    addrs: &[SocketAddr],
    server_addr: SocketAddr,
    trace_path: &dyn Fn(usize) -> Option<PathBuf>,
) -> Result<Vec<RobotReport>> {
    let mut children: Vec<Child> = Vec::new();
    for i in 0..cfg.n_robots {
        let peers: Vec<String> = addrs
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, a)| a.to_string())
            .collect();
        let mut c = Command::new(exe);
        c.arg("robot")
            .arg("--id")
            .arg(i.to_string())
            .arg("--map")
            .arg(&cfg.map_path)
            .arg("--start")
            .arg(format!("{},{}", starts[i].x, starts[i].y))
            .arg("--bind")
            .arg(addrs[i].to_string())
            .arg("--model-server")
            .arg(server_addr.to_string())
            .arg("--n-p")
            .arg(cfg.n_p.to_string())
            .arg("--scale")
            .arg(cfg.coordinate_scale.to_string())
            .arg("--tick-ms")
            .arg(cfg.tick_period.as_millis().to_string())
            .arg("--max-ticks")
            .arg(cfg.max_ticks.to_string())
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        if !peers.is_empty() {
            c.arg("--peers").arg(peers.join(","));
        }
        if let Some(p) = trace_path(i) {
            c.arg("--trace").arg(p);
        }
        children.push(c.spawn().map_err(|e| {
            Error::Runtime(format!("cannot spawn robot process {}: {e}", exe.display()))
        })?);
    }

    if let Some((k, after)) = cfg.kill {
        std::thread::sleep(after);
        let _ = children[k].kill();
    }

    let mut reports = Vec::with_capacity(children.len());
    for (i, child) in children.into_iter().enumerate() {
        let out = child.wait_with_output()?;
        let stdout = String::from_utf8_lossy(&out.stdout);
        let report = stdout
            .lines()
            .rev()
            .find_map(|l| RobotReport::decode(l).ok());
        match report {
            Some(r) => reports.push(r),
            None => reports.push(RobotReport {
                id: i as u32,
                ticks: 0,
                cell: starts[i],
                success: false,
                degraded: false,
            }),
        }
    }
    Ok(reports)
}

/// Merge per-robot traces into one CSV sorted by (tick, id).
fn merge_traces(
    cfg: &OrchestrateConfig,
    trace_path: &dyn Fn(usize) -> Option<PathBuf>,
) -> Result<String> {
    let mut rows: Vec<(u64, u32, String)> = Vec::new();
    for i in 0..cfg.n_robots {
        let Some(path) = trace_path(i) else { continue };
        let Ok(text) = std::fs::read_to_string(&path) else { continue };
        for line in text.lines().skip(1) {
            let mut it = line.split(',');
            let tick: u64 = it.next().and_then(|v| v.parse().ok()).unwrap_or(0);
            let id: u32 = it.next().and_then(|v| v.parse().ok()).unwrap_or(0);
            rows.push((tick, id, line.to_string()));
        }
    }
    rows.sort_by_key(|&(tick, id, _)| (tick, id));
    let mut out = String::from("tick,id,x,y,target_x,target_y,degraded\n");
    for (_, _, line) in rows {
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}
