//! One robot process: broadcast own state, track peers, act greedily on the
//! shared policy, and stop once everyone sits on the same cell.

use std::collections::HashMap;
use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{action_mask, build_observation, compute_target, EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::gridmap::{Action, Coord, GridMap};
use crate::neural::{argmax_action, masked_distribution, PolicyValueNet};
use crate::swarm::protocol::{StateMessage, PROTOCOL_VERSION};

/// Ticks of unanimity required before exiting; two guards message races.
pub const UNANIMITY_TICKS: u32 = 2;

/// Ticks of a completely frozen configuration (own cell and every known peer
/// unchanged, rendezvous not reached) before the stall breaker fires.
pub const STALL_TICKS: u32 = 6;

#[derive(Debug, Clone)]
pub struct RobotConfig {
    pub id: u32,
    pub map: GridMap,
    pub start: Coord,
    /// Local UDP endpoint; port 0 is allowed only when peers discover this
    /// robot some other way, so orchestrated runs pass explicit ports.
    pub bind: SocketAddr,
    /// UDP endpoints of every other robot.
    pub peers: Vec<SocketAddr>,
    pub n_p: usize,
    /// Observation divisor; must match what the model was trained with.
    pub coordinate_scale: f64,
    pub tick_period: Duration,
    pub max_ticks: u64,
    /// Peer staleness (in ticks) after which its state counts as degraded.
    pub soft_stale_ticks: u64,
    /// Staleness after which the peer is dropped from the active set.
    pub hard_stale_ticks: u64,
    pub trace_path: Option<PathBuf>,
    /// In-process kill switch used by fault-injection tests.
    pub stop: Option<Arc<AtomicBool>>,
}

impl RobotConfig {
    pub fn new(id: u32, map: GridMap, start: Coord, bind: SocketAddr) -> RobotConfig {
        RobotConfig {
            id,
            map,
            start,
            bind,
            peers: Vec::new(),
            n_p: 3,
            coordinate_scale: 100.0,
            tick_period: Duration::from_millis(100),
            max_ticks: 2000,
            soft_stale_ticks: 3,
            hard_stale_ticks: 10,
            trace_path: None,
            stop: None,
        }
    }
}

/// Terminal report, also rendered as the `REPORT` stdout line by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RobotReport {
    pub id: u32,
    pub ticks: u64,
    pub cell: Coord,
    pub success: bool,
    /// True if any tick ran on stale peer data.
    pub degraded: bool,
}

impl RobotReport {
    pub fn encode(&self) -> String {
        format!(
            "REPORT {} {} {} {} {} {}\n",
            self.id, self.ticks, self.cell.x, self.cell.y, self.success as u8, self.degraded as u8
        )
    }

    pub fn decode(line: &str) -> Result<RobotReport> {
        let parts: Vec<&str> = line.trim_end().split(' ').collect();
        if parts.len() != 7 || parts[0] != "REPORT" {
            return Err(Error::Parse(format!("bad REPORT line: '{}'", line.trim_end())));
        }
        let num = |i: usize| -> Result<u64> {
            parts[i]
                .parse()
                .map_err(|_| Error::Parse(format!("bad REPORT field '{}'", parts[i])))
        };
        Ok(RobotReport {
            id: num(1)? as u32,
            ticks: num(2)?,
            cell: Coord::new(num(3)? as usize, num(4)? as usize),
            success: num(5)? != 0,
            degraded: num(6)? != 0,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct PeerState {
    tick: u64,
    pos: Coord,
    heard: Instant,
}

type PeerTable = Arc<Mutex<HashMap<u32, PeerState>>>;

fn spawn_receiver(
    socket: UdpSocket,
    table: PeerTable,
    own_id: u32,
    map_w: usize,
    map_h: usize,
    stop: Arc<AtomicBool>,
) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        let mut buf = [0u8; 256];
        while !stop.load(Ordering::Relaxed) {
            match socket.recv_from(&mut buf) {
                Ok((n, _)) => {
                    let Ok(text) = std::str::from_utf8(&buf[..n]) else { continue };
                    let Ok(msg) = StateMessage::decode(text) else { continue };
                    if msg.version != PROTOCOL_VERSION || msg.robot_id == own_id {
                        continue;
                    }
                    if (msg.x as usize) >= map_w || (msg.y as usize) >= map_h {
                        continue;
                    }
                    let mut t = table.lock().unwrap();
                    let entry = t.entry(msg.robot_id);
                    match entry {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            // Receivers drop non-increasing ticks per robot.
                            if msg.tick > e.get().tick {
                                e.insert(PeerState {
                                    tick: msg.tick,
                                    pos: Coord::new(msg.x as usize, msg.y as usize),
                                    heard: Instant::now(),
                                });
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(PeerState {
                                tick: msg.tick,
                                pos: Coord::new(msg.x as usize, msg.y as usize),
                                heard: Instant::now(),
                            });
                        }
                    }
                }
                Err(ref e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut => {}
                Err(_) => break,
            }
        }
    })
}

/// Run the robot to termination. Returns the terminal report; `Err` means a
/// setup failure (bind, handshake), not a missed rendezvous.
pub fn run_robot(cfg: &RobotConfig, net: &PolicyValueNet) -> Result<RobotReport> {
    if !cfg.map.is_free(cfg.start) {
        return Err(Error::Config(format!("start cell {:?} is not free", cfg.start)));
    }
    if cfg.peers.len() + 1 > cfg.n_p {
        return Err(Error::Config(format!(
            "{} robots exceed the model's n_p = {}",
            cfg.peers.len() + 1,
            cfg.n_p
        )));
    }
    let socket = UdpSocket::bind(cfg.bind)?;
    socket.set_read_timeout(Some(Duration::from_millis(20)))?;
    let table: PeerTable = Arc::new(Mutex::new(HashMap::new()));
    let stop = cfg.stop.clone().unwrap_or_else(|| Arc::new(AtomicBool::new(false)));
    let receiver = spawn_receiver(
        socket.try_clone()?,
        Arc::clone(&table),
        cfg.id,
        cfg.map.width(),
        cfg.map.height(),
        Arc::clone(&stop),
    );

    let mut pos = cfg.start;
    let mut tick: u64 = 0;
    // Stall breaker: the greedy policy can deadlock when its preferred move
    // is masked by a static obstacle and it falls back to staying put (on
    // training maps dynamic obstacles eventually unblock such cells; a static
    // deployment map never does). If the whole known configuration is frozen
    // for STALL_TICKS without rendezvous, take one random legal move to break
    // the symmetry, then resume greedy.
    let mut stall_rng =
        ChaCha8Rng::seed_from_u64(0x57a11 ^ (cfg.id as u64).wrapping_mul(0x9e3779b97f4a7c15));
    let mut stall_streak: u32 = 0;
    let mut last_config: Vec<(u32, Coord)> = Vec::new();
    let mut degraded_ever = false;
    let mut unanimity_streak = 0u32;
    let mut success = false;
    let mut trace = String::from("tick,id,x,y,target_x,target_y,degraded\n");
    let env_cfg = EnvConfig {
        n_p: cfg.n_p,
        coordinate_scale: cfg.coordinate_scale,
        ..EnvConfig::defaults(cfg.map.width(), cfg.map.height())
    };
    let soft = cfg.tick_period * cfg.soft_stale_ticks as u32;
    let hard = cfg.tick_period * cfg.hard_stale_ticks as u32;

    // Handshake: announce tick 0 until every peer has been heard once, or
    // the grace budget runs out (late peers are picked up mid-run).
    let handshake_deadline = Instant::now() + hard.max(Duration::from_millis(500)) * 4;
    while !cfg.peers.is_empty()
        && table.lock().unwrap().len() < cfg.peers.len()
        && Instant::now() < handshake_deadline
        && !stop.load(Ordering::Relaxed)
    {
        broadcast(&socket, cfg, 0, pos);
        std::thread::sleep(cfg.tick_period.min(Duration::from_millis(20)));
    }
    if !cfg.peers.is_empty() && table.lock().unwrap().is_empty() {
        stop.store(true, Ordering::Relaxed);
        let _ = receiver.join();
        return Err(Error::Runtime(format!("robot {}: no peer ever heard", cfg.id)));
    }

    while tick < cfg.max_ticks && !stop.load(Ordering::Relaxed) {
        tick += 1;
        broadcast(&socket, cfg, tick, pos);
        std::thread::sleep(cfg.tick_period);

        // Freshest-snapshot assembly: last known value for every peer not yet
        // past the hard staleness cutoff.
        let now = Instant::now();
        let mut degraded_now = false;
        let mut peers: Vec<(u32, Coord)> = Vec::new();
        {
            let t = table.lock().unwrap();
            for (&pid, st) in t.iter() {
                let age = now.duration_since(st.heard);
                if age > hard {
                    continue; // dropped; survivors rendezvous among themselves
                }
                if age > soft {
                    degraded_now = true;
                }
                peers.push((pid, st.pos));
            }
        }
        peers.sort_by_key(|&(pid, _)| pid);
        degraded_ever |= degraded_now;

        let mut config: Vec<(u32, Coord)> = vec![(cfg.id, pos)];
        config.extend(peers.iter().copied());
        if config == last_config {
            stall_streak += 1;
        } else {
            stall_streak = 0;
            last_config = config;
        }

        let mut positions = Vec::with_capacity(peers.len() + 1);
        positions.push(pos);
        positions.extend(peers.iter().map(|&(_, p)| p));

        // All robots derive the same target from the same snapshot; the
        // remap tie-break is seeded by the tick so it agrees everywhere.
        let mut target_rng = ChaCha8Rng::seed_from_u64(tick);
        let target = compute_target(&positions, &cfg.map, &mut target_rng)?;

        let state = EnvState {
            active_count: positions.len(),
            positions,
            target,
            t: tick as usize,
            done: false,
            prev_potential: 0.0,
        };
        let action = if state.active_count == 1 {
            Action::Stay
        } else if stall_streak >= STALL_TICKS {
            stall_streak = 0;
            let mask = action_mask(&state, &cfg.map, 0);
            let legal: Vec<Action> = crate::gridmap::ACTIONS
                .into_iter()
                .filter(|a| *a != Action::Stay && mask[a.index()])
                .collect();
            if legal.is_empty() {
                Action::Stay
            } else {
                legal[stall_rng.gen_range(0..legal.len())]
            }
        } else {
            let obs = build_observation(&state, &cfg.map, 0, &env_cfg)?;
            let mask = action_mask(&state, &cfg.map, 0);
            let (logits, _) = net.forward(obs.as_slice())?;
            let probs = masked_distribution(&logits, &mask)?;
            Action::from_index(argmax_action(&probs)).unwrap()
        };
        if let Some(dest) = {
            let (dx, dy) = action.delta();
            cfg.map.offset(pos, dx, dy)
        } {
            pos = dest;
        }

        trace.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            tick, cfg.id, pos.x, pos.y, target.x, target.y, degraded_now as u8
        ));

        let united = state
            .positions
            .iter()
            .skip(1)
            .all(|&p| p == pos)
            && (state.active_count > 1 || cfg.peers.is_empty());
        if united {
            unanimity_streak += 1;
            if unanimity_streak >= UNANIMITY_TICKS || cfg.peers.is_empty() {
                success = true;
                // Final announcements so slower peers see the meeting cell.
                for _ in 0..UNANIMITY_TICKS {
                    tick += 1;
                    broadcast(&socket, cfg, tick, pos);
                    std::thread::sleep(cfg.tick_period);
                }
                break;
            }
        } else {
            unanimity_streak = 0;
        }
    }

    stop.store(true, Ordering::Relaxed);
    let _ = receiver.join();
    if let Some(path) = &cfg.trace_path {
        std::fs::write(path, trace)?;
    }
    Ok(RobotReport { id: cfg.id, ticks: tick, cell: pos, success, degraded: degraded_ever })
}

fn broadcast(socket: &UdpSocket, cfg: &RobotConfig, tick: u64, pos: Coord) {
    let msg = StateMessage {
        version: PROTOCOL_VERSION,
        robot_id: cfg.id,
        tick,
        x: pos.x as u32,
        y: pos.y as u32,
    };
    let bytes = msg.encode();
    for peer in &cfg.peers {
        let _ = socket.send_to(bytes.as_bytes(), peer);
    }
}
