//! Evaluation: greedy policy rollouts, optimality gaps against a BFS lower
//! bound, baseline reward variants, inference latency and padding
//! compatibility checks.

use std::time::Instant;

use rand::Rng;

use crate::env::{compute_target, Env, EnvConfig, OthersPolicy, RewardRule};
use crate::error::{Error, Result};
use crate::gridmap::{Action, Coord, ACTION_COUNT, UNREACHABLE};
use crate::neural::{argmax_action, masked_distribution, PolicyValueNet};

/// Summary of one finished (or truncated) episode.
#[derive(Debug, Clone)]
pub struct EpisodeStats {
    pub length: usize,
    pub reward_sum: f64,
    /// True when the robots met; false when the step budget cut the episode.
    pub achieved: bool,
    pub initial_positions: Vec<Coord>,
    /// Learner's final cell; the meeting cell when `achieved`.
    pub final_cell: Coord,
}

/// The trained configuration and the four comparison rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardVariant {
    Ours,
    OursNoMask,
    BaselineA,
    BaselineB,
    BaselineC,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 5] = [
        RewardVariant::Ours,
        RewardVariant::OursNoMask,
        RewardVariant::BaselineA,
        RewardVariant::BaselineB,
        RewardVariant::BaselineC,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RewardVariant::Ours => "ours",
            RewardVariant::OursNoMask => "ours-nomask",
            RewardVariant::BaselineA => "baseline-a",
            RewardVariant::BaselineB => "baseline-b",
            RewardVariant::BaselineC => "baseline-c",
        }
    }

    pub fn parse(s: &str) -> Result<RewardVariant> {
        RewardVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown reward variant '{s}'")))
    }

    /// Reward rule and masking flag implied by the variant. The baselines
    /// disable masking so their collision penalties are reachable.
    pub fn rule_and_masking(&self, cfg: &EnvConfig) -> (RewardRule, bool) {
        match self {
            RewardVariant::Ours => (RewardRule::PotentialShaping, true),
            RewardVariant::OursNoMask => (RewardRule::PotentialShaping, false),
            RewardVariant::BaselineA => (RewardRule::TableA, false),
            RewardVariant::BaselineB => {
                (RewardRule::TableB { n_m: cfg.max_episode_steps as f64 }, false)
            }
            RewardVariant::BaselineC => (RewardRule::TableC, false),
        }
    }
}

pub fn mean_steps_taken(episodes: &[EpisodeStats]) -> Result<f64> {
    let achieved: Vec<&EpisodeStats> = episodes.iter().filter(|e| e.achieved).collect();
    if achieved.is_empty() {
        return Err(Error::UndefinedMetric("MST over zero achieved episodes".into()));
    }
    Ok(achieved.iter().map(|e| e.length as f64).sum::<f64>() / achieved.len() as f64)
}

pub fn rewards_mean(episodes: &[EpisodeStats]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::UndefinedMetric("RM over zero episodes".into()));
    }
    Ok(episodes.iter().map(|e| e.reward_sum).sum::<f64>() / episodes.len() as f64)
}

pub fn achieved_fraction(episodes: &[EpisodeStats]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::UndefinedMetric("achieved fraction over zero episodes".into()));
    }
    Ok(episodes.iter().filter(|e| e.achieved).count() as f64 / episodes.len() as f64)
}

/// Play one episode to completion or truncation from the env's current reset
/// state. Greedy mode takes the argmax action everywhere.
pub fn run_episode(env: &mut Env, net: &PolicyValueNet, greedy: bool) -> Result<EpisodeStats> {
    if env.needs_reset() {
        return Err(Error::Contract("run_episode needs a freshly reset env".into()));
    }
    let initial_positions = env.state().positions.clone();
    let mut length = 0usize;
    let mut reward_sum = 0.0;
    let mut achieved = false;
    while !env.needs_reset() {
        let obs = env.learner_obs()?;
        let mask = if env.masking() { env.learner_mask() } else { [true; ACTION_COUNT] };
        let (logits, _) = net.forward(obs.as_slice())?;
        let probs = masked_distribution(&logits, &mask)?;
        let idx = if greedy {
            argmax_action(&probs)
        } else {
            env.sample_learner_action(&probs)
        };
        let out = env.step(
            Action::from_index(idx).unwrap(),
            OthersPolicy::Net { net, greedy },
        )?;
        length += 1;
        reward_sum += out.reward;
        achieved = out.done;
    }
    Ok(EpisodeStats {
        length,
        reward_sum,
        achieved,
        initial_positions,
        final_cell: env.state().positions[0],
    })
}

/// `episodes` fresh episodes on the given environment.
pub fn evaluate(
    env: &mut Env,
    net: &PolicyValueNet,
    episodes: usize,
    greedy: bool,
) -> Result<Vec<EpisodeStats>> {
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset()?;
        out.push(run_episode(env, net, greedy)?);
    }
    Ok(out)
}

/// Lower bound on the steps any policy needs from `positions`: the largest
/// BFS distance from the initial centroid target to a robot. The real target
/// drifts as robots move, so this is a bound, not the exact optimum.
pub fn optimal_steps<R: Rng>(
    positions: &[Coord],
    map: &crate::gridmap::GridMap,
    rng: &mut R,
) -> Result<u32> {
    let target = compute_target(positions, map, rng)?;
    let field = map.shortest_path_distances(target)?;
    let mut worst = 0u32;
    for &p in positions {
        let d = field.get(p);
        if d == UNREACHABLE {
            return Err(Error::UndefinedMetric(format!(
                "robot at {p:?} cannot reach the initial target {target:?}"
            )));
        }
        worst = worst.max(d);
    }
    Ok(worst)
}

/// One gap measurement: steps taken minus the BFS lower bound, or None when
/// the episode truncated.
#[derive(Debug, Clone)]
pub struct GapResult {
    pub steps: usize,
    pub optimal: u32,
    pub gap: Option<f64>,
}

/// Greedy episodes with the gap against the initial-target lower bound.
pub fn optimality_gaps(
    env: &mut Env,
    net: &PolicyValueNet,
    episodes: usize,
    gap_seed: u64,
) -> Result<Vec<GapResult>> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(gap_seed);
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset()?;
        let optimal = optimal_steps(&env.state().positions, env.map(), &mut rng)?;
        let stats = run_episode(env, net, true)?;
        // Any meeting takes at least the worst BFS distance from the start
        // layout to wherever the robots actually met.
        if stats.achieved {
            let field = env.map().shortest_path_distances(stats.final_cell)?;
            let bound = stats
                .initial_positions
                .iter()
                .map(|&p| field.get(p))
                .max()
                .unwrap_or(0);
            if bound != UNREACHABLE && stats.length < bound as usize {
                return Err(Error::Contract(format!(
                    "episode of {} steps beat the BFS bound {bound}",
                    stats.length
                )));
            }
        }
        out.push(GapResult {
            steps: stats.length,
            optimal,
            gap: stats.achieved.then(|| stats.length as f64 - optimal as f64),
        });
    }
    Ok(out)
}

/// Train-free evaluation of a reward variant with an already-trained net:
/// configures rule and masking, then runs sampled episodes.
pub fn run_baseline(
    env: &mut Env,
    net: &PolicyValueNet,
    variant: RewardVariant,
    episodes: usize,
) -> Result<Vec<EpisodeStats>> {
    let (rule, masking) = variant.rule_and_masking(env.config());
    env.set_reward_rule(rule);
    env.set_masking(masking);
    evaluate(env, net, episodes, false)
}

/// Latency of one masked forward pass, in microseconds: (mean, p99).
pub fn bench_inference(net: &PolicyValueNet, obs: &[f64], trials: usize) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::Contract("bench_inference needs trials > 0".into()));
    }
    let mask = [true; ACTION_COUNT];
    let mut samples = Vec::with_capacity(trials);
    // Warm-up pass so the first measurement is not a cache miss.
    let _ = net.forward(obs)?;
    for _ in 0..trials {
        let start = Instant::now();
        let (logits, _) = net.forward(obs)?;
        let probs = masked_distribution(&logits, &mask)?;
        std::hint::black_box(argmax_action(&probs));
        samples.push(start.elapsed().as_secs_f64() * 1e6);
    }
    let mean = samples.iter().sum::<f64>() / trials as f64;
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p99_idx = ((trials as f64 * 0.99).ceil() as usize).min(trials) - 1;
    Ok((mean, samples[p99_idx]))
}

/// Run greedy episodes at every robot count the observation layout supports,
/// confirming a model trained with padding handles all of them.
pub fn padding_compat(
    env: &mut Env,
    net: &PolicyValueNet,
    episodes_per_count: usize,
) -> Result<Vec<(usize, Vec<EpisodeStats>)>> {
    let n_p = env.config().n_p;
    let mut out = Vec::new();
    for count in 2..=n_p {
        let mut stats = Vec::with_capacity(episodes_per_count);
        for _ in 0..episodes_per_count {
            env.reset_with_count(count)?;
            stats.push(run_episode(env, net, true)?);
        }
        out.push((count, stats));
    }
    Ok(out)
}

/// A hand-written rendezvous policy used as an oracle and fallback: walk the
/// learner along a BFS-shortest path toward the current target while others
/// use the net. Not part of the trained system; exercised by tests and the
/// gap tooling for sanity checks.
pub fn bfs_pilot_action(env: &Env) -> Result<Action> {
    let field = env.map().shortest_path_distances(env.state().target)?;
    let pos = env.state().positions[0];
    let mask = env.learner_mask();
    let mut best = Action::Stay;
    let mut best_d = field.get(pos);
    for action in crate::gridmap::ACTIONS {
        if !mask[action.index()] || action == Action::Stay {
            continue;
        }
        let (dx, dy) = action.delta();
        if let Some(dest) = env.map().offset(pos, dx, dy) {
            let d = field.get(dest);
            if d < best_d {
                best_d = d;
                best = action;
            }
        }
    }
    Ok(best)
}
