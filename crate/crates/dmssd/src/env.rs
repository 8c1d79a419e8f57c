//! The rendezvous environment: reset/step cycle, dynamic centroid target,
//! potential-shaped reward, action masking and padded observations.
//!
//! One robot (index 0, the learner) produces training transitions; every
//! other active robot queries the same shared policy. The target is the
//! rounded centroid of all robot positions, remapped onto the robots'
//! static-free component, and is recomputed after every step.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gridmap::{Action, Coord, GridMap, ACTION_COUNT, UNREACHABLE};
use crate::neural::{argmax_action, masked_distribution, sample_action, PolicyValueNet};

/// Environment configuration. Reward defaults follow r1=1, r2=-10, r3=-5.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub map_x: usize,
    pub map_y: usize,
    pub static_density: f64,
    pub dynamic_density: f64,
    pub map_seed: u64,
    /// Maximum robot count the observation layout supports.
    pub n_p: usize,
    pub r_goal: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub max_episode_steps: usize,
    /// Observations are divided by this; fixed across map sizes so a model
    /// transfers between them.
    pub coordinate_scale: f64,
}

impl EnvConfig {
    /// Defaults for an `x` by `y` map: truncation at 8*(x+y), scale 100.
    pub fn defaults(map_x: usize, map_y: usize) -> EnvConfig {
        EnvConfig {
            map_x,
            map_y,
            static_density: 0.05,
            dynamic_density: 0.02,
            map_seed: 0,
            n_p: 3,
            r_goal: 10.0,
            r1: 1.0,
            r2: -10.0,
            r3: -5.0,
            max_episode_steps: 8 * (map_x + map_y),
            coordinate_scale: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_p < 2 {
            return bad(format!("n_p must be >= 2, got {}", self.n_p));
        }
        if !(self.r1 > 0.0 && self.r2 < 0.0 && self.r3 < 0.0) {
            return bad(format!(
                "reward signs must satisfy r1 > 0, r2 < 0, r3 < 0 (r1={}, r2={}, r3={})",
                self.r1, self.r2, self.r3
            ));
        }
        if !(self.r1.abs() < self.r3.abs() && self.r3.abs() < self.r2.abs()) {
            return bad(format!(
                "reward magnitudes must satisfy |r1| < |r3| < |r2| (r1={}, r2={}, r3={})",
                self.r1, self.r2, self.r3
            ));
        }
        if self.r_goal < 0.0 {
            return bad(format!("r_goal must be >= 0, got {}", self.r_goal));
        }
        if self.max_episode_steps == 0 {
            return bad("max_episode_steps must be positive".into());
        }
        if self.coordinate_scale <= 0.0 {
            return bad(format!("coordinate_scale must be positive, got {}", self.coordinate_scale));
        }
        Ok(())
    }

    /// Observation vector length: 2*n_p coordinates plus the sum-distance term.
    pub fn obs_len(&self) -> usize {
        2 * self.n_p + 1
    }
}

/// Reward rule applied each step. `PotentialShaping` is the default; the
/// table variants exist for the ablation study and expect masking disabled
/// where collisions must be observable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardRule {
    /// r1 / r2 / r3 on potential increase / decrease / no change, plus
    /// r_goal when every robot shares a cell.
    PotentialShaping,
    /// {5 arrival; 1+d when close; 10*(d_prev - d_now) otherwise; -10 collision}.
    TableA,
    /// {-10/n_m move; -10/n_m - 1 collision; 20-10/n_m approach; 10-10/n_m arrival}.
    TableB { n_m: f64 },
    /// {25 arrival; -300 collision; -1 movement}.
    TableC,
}

/// Inputs to a reward rule for one learner step.
#[derive(Debug, Clone, Copy)]
pub struct RewardInputs {
    /// BFS distance from the decision-time target to the learner, before the move.
    pub d_prev: u32,
    /// Same distance after the move.
    pub d_new: u32,
    /// Learner picked an action whose destination was blocked (unmasked runs).
    pub collision: bool,
    /// All active robots share one cell after the step.
    pub all_met: bool,
}

/// Potential of a state: negated BFS distance from target to the learner.
/// Defined so that an approaching move strictly increases the potential.
pub fn potential(dist_to_learner: u32) -> f64 {
    if dist_to_learner == UNREACHABLE {
        // UNREACHABLE guard: large negative, never a finite distance.
        -1e12
    } else {
        -(dist_to_learner as f64)
    }
}

/// Shaping reward from two potentials plus the goal bonus.
pub fn reward(prev_potential: f64, new_potential: f64, all_met: bool, cfg: &EnvConfig) -> f64 {
    let diff = prev_potential - new_potential;
    let shaping = if diff < 0.0 {
        cfg.r1
    } else if diff > 0.0 {
        cfg.r2
    } else {
        cfg.r3
    };
    (if all_met { cfg.r_goal } else { 0.0 }) + shaping
}

fn variant_reward(rule: RewardRule, inp: &RewardInputs, cfg: &EnvConfig) -> f64 {
    match rule {
        RewardRule::PotentialShaping => reward(
            potential(inp.d_prev),
            potential(inp.d_new),
            inp.all_met,
            cfg,
        ),
        RewardRule::TableA => {
            if inp.collision {
                -10.0
            } else if inp.all_met {
                5.0
            } else if inp.d_new <= 1 {
                1.0 + inp.d_new as f64
            } else {
                10.0 * (inp.d_prev as f64 - inp.d_new as f64)
            }
        }
        RewardRule::TableB { n_m } => {
            let base = -10.0 / n_m;
            if inp.all_met {
                10.0 + base
            } else if inp.collision {
                base - 1.0
            } else if inp.d_new < inp.d_prev {
                20.0 + base
            } else {
                base
            }
        }
        RewardRule::TableC => {
            if inp.all_met {
                25.0
            } else if inp.collision {
                -300.0
            } else {
                -1.0
            }
        }
    }
}

/// Fixed-length observation: acting robot's coordinates, other active
/// robots' coordinates in ascending index order, zero padding, then the
/// scaled sum of BFS distances to the other robots.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsVector {
    pub values: Vec<f64>,
}

impl ObsVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Mutable episode state.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub positions: Vec<Coord>,
    pub active_count: usize,
    pub target: Coord,
    pub t: usize,
    pub done: bool,
    pub prev_potential: f64,
}

/// Per-step output.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: ObsVector,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    pub truncated: bool,
    pub collision: bool,
    /// Learner was unreachable from the target (potential guard fired).
    pub unreachable: bool,
    pub d_prev: u32,
    pub d_new: u32,
}

/// How non-learner robots pick their actions.
#[derive(Clone, Copy)]
pub enum OthersPolicy<'a> {
    /// Query the shared network; sample during training, argmax during eval.
    Net { net: &'a PolicyValueNet, greedy: bool },
    /// Forced stay (test hook).
    Frozen,
    /// Walk a BFS-shortest path toward the current target (oracle hook).
    Bfs,
}

pub struct Env {
    cfg: EnvConfig,
    rule: RewardRule,
    masking: bool,
    map: GridMap,
    state: EnvState,
    rng: ChaCha8Rng,
    needs_reset: bool,
}

impl Env {
    /// Build with a generated map and the default shaping reward.
    pub fn new(cfg: EnvConfig, env_seed: u64) -> Result<Env> {
        let map = GridMap::generate(
            cfg.map_x,
            cfg.map_y,
            cfg.static_density,
            cfg.dynamic_density,
            cfg.map_seed,
        )?;
        Env::with_map(cfg, map, env_seed)
    }

    pub fn with_map(cfg: EnvConfig, map: GridMap, env_seed: u64) -> Result<Env> {
        cfg.validate()?;
        let state = EnvState {
            positions: Vec::new(),
            active_count: 0,
            target: Coord::new(0, 0),
            t: 0,
            done: false,
            prev_potential: 0.0,
        };
        Ok(Env {
            cfg,
            rule: RewardRule::PotentialShaping,
            masking: true,
            map,
            state,
            rng: ChaCha8Rng::seed_from_u64(env_seed),
            needs_reset: true,
        })
    }

    pub fn set_reward_rule(&mut self, rule: RewardRule) {
        self.rule = rule;
    }

    pub fn set_masking(&mut self, on: bool) {
        self.masking = on;
    }

    pub fn masking(&self) -> bool {
        self.masking
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn needs_reset(&self) -> bool {
        self.needs_reset
    }

    /// Start a new episode with a uniformly drawn active robot count.
    pub fn reset(&mut self) -> Result<ObsVector> {
        let count = self.rng.gen_range(2..=self.cfg.n_p);
        self.reset_with_count(count)
    }

    /// Start a new episode with exactly `count` robots (padding-compat runs).
    pub fn reset_with_count(&mut self, count: usize) -> Result<ObsVector> {
        if !(2..=self.cfg.n_p).contains(&count) {
            return Err(Error::Contract(format!(
                "robot count {count} outside [2, {}]",
                self.cfg.n_p
            )));
        }
        const RETRIES: usize = 64;
        let mut placed: Option<Vec<Coord>> = None;
        for _ in 0..RETRIES {
            // Pick the component of a random robot-free cell, then sample the
            // remaining robots without replacement inside it.
            let first = match self.sample_free_cell() {
                Some(c) => c,
                None => break,
            };
            let mut cells: Vec<Coord> = self
                .map
                .component_cells(first)?
                .into_iter()
                .filter(|&c| self.map.is_free(c))
                .collect();
            if cells.len() < count {
                continue;
            }
            let mut positions = Vec::with_capacity(count);
            for _ in 0..count {
                let i = self.rng.gen_range(0..cells.len());
                positions.push(cells.swap_remove(i));
            }
            placed = Some(positions);
            break;
        }
        let positions =
            placed.ok_or_else(|| Error::MapDegenerate("no feasible robot placement".into()))?;
        debug_assert!(self.map.is_rendezvous_feasible(&positions)?);
        let target = compute_target(&positions, &self.map, &mut self.rng)?;
        let field = self.map.shortest_path_distances(target)?;
        self.state = EnvState {
            prev_potential: potential(field.get(positions[0])),
            positions,
            active_count: count,
            target,
            t: 0,
            done: false,
        };
        self.needs_reset = false;
        self.learner_obs()
    }

    fn sample_free_cell(&mut self) -> Option<Coord> {
        for _ in 0..4096 {
            let c = Coord::new(
                self.rng.gen_range(0..self.map.width()),
                self.rng.gen_range(0..self.map.height()),
            );
            if self.map.is_free(c) {
                return Some(c);
            }
        }
        None
    }

    pub fn learner_obs(&self) -> Result<ObsVector> {
        build_observation(&self.state, &self.map, 0, &self.cfg)
    }

    /// Mask for the learner's next decision. Valid while `needs_reset` is false.
    pub fn learner_mask(&self) -> [bool; ACTION_COUNT] {
        action_mask(&self.state, &self.map, 0)
    }

    pub fn robot_mask(&self, robot_index: usize) -> [bool; ACTION_COUNT] {
        action_mask(&self.state, &self.map, robot_index)
    }

    /// Sample the learner's action from the environment's own stream so a
    /// whole training run is reproducible from one seed.
    pub fn sample_learner_action(&mut self, probs: &[f64; ACTION_COUNT]) -> usize {
        sample_action(probs, &mut self.rng)
    }

    /// Advance one environment step. The learner applies `action`; every
    /// other active robot queries `others`. Dynamic obstacles move at the end
    /// of the step so the returned observation/mask see their new layout and
    /// remain sound for the next decision.
    pub fn step(&mut self, action: Action, others: OthersPolicy<'_>) -> Result<StepOutcome> {
        if self.needs_reset {
            return Err(Error::Contract("step called on finished episode".into()));
        }
        let mask = self.learner_mask();
        let mut collision = false;
        if self.masking {
            if !mask[action.index()] {
                return Err(Error::Contract(format!(
                    "masked action {:?} submitted by trainer",
                    action
                )));
            }
        } else if !mask[action.index()] {
            collision = true;
        }

        // Potential bookkeeping against the decision-time target.
        let field = self.map.shortest_path_distances(self.state.target)?;
        let d_prev = field.get(self.state.positions[0]);

        // Learner moves (collision keeps it in place).
        if !collision {
            if let Some(dest) = self.apply(self.state.positions[0], action) {
                self.state.positions[0] = dest;
            }
        }
        let d_new = field.get(self.state.positions[0]);

        // Other active robots act on the shared policy with their own view.
        for i in 1..self.state.active_count {
            let a = match others {
                OthersPolicy::Frozen => Action::Stay,
                OthersPolicy::Bfs => {
                    let target_field = self.map.shortest_path_distances(self.state.target)?;
                    let pos = self.state.positions[i];
                    let mask = action_mask(&self.state, &self.map, i);
                    let mut best = Action::Stay;
                    let mut best_d = target_field.get(pos);
                    for action in crate::gridmap::ACTIONS {
                        if !mask[action.index()] || action == Action::Stay {
                            continue;
                        }
                        let (dx, dy) = action.delta();
                        if let Some(dest) = self.map.offset(pos, dx, dy) {
                            let d = target_field.get(dest);
                            if d < best_d {
                                best_d = d;
                                best = action;
                            }
                        }
                    }
                    best
                }
                OthersPolicy::Net { net, greedy } => {
                    let obs = build_observation(&self.state, &self.map, i, &self.cfg)?;
                    let robot_mask = if self.masking {
                        self.robot_mask(i)
                    } else {
                        [true; ACTION_COUNT]
                    };
                    let (logits, _) = net.forward(obs.as_slice())?;
                    let probs = masked_distribution(&logits, &robot_mask)?;
                    let idx = if greedy {
                        argmax_action(&probs)
                    } else {
                        sample_action(&probs, &mut self.rng)
                    };
                    Action::from_index(idx).unwrap()
                }
            };
            // Unmasked robots may pick a blocked move; they stay instead.
            if action_mask(&self.state, &self.map, i)[a.index()] {
                if let Some(dest) = self.apply(self.state.positions[i], a) {
                    self.state.positions[i] = dest;
                }
            }
        }

        // Retarget from the new positions.
        self.state.target = compute_target(
            &self.state.positions[..self.state.active_count],
            &self.map,
            &mut self.rng,
        )?;

        let all_met = self.state.positions[..self.state.active_count]
            .iter()
            .all(|&p| p == self.state.positions[0]);
        let inputs = RewardInputs { d_prev, d_new, collision, all_met };
        let r = variant_reward(self.rule, &inputs, &self.cfg);

        self.state.t += 1;
        self.state.done = all_met;
        self.state.prev_potential = potential(d_new);
        let truncated = !all_met && self.state.t >= self.cfg.max_episode_steps;
        self.needs_reset = all_met || truncated;

        // Dynamic obstacles move before the next masks are observed.
        self.map.step_dynamic_obstacles(&mut self.rng);

        Ok(StepOutcome {
            obs: self.learner_obs()?,
            reward: r,
            done: all_met,
            info: StepInfo {
                truncated,
                collision,
                unreachable: d_prev == UNREACHABLE || d_new == UNREACHABLE,
                d_prev,
                d_new,
            },
        })
    }

    fn apply(&self, from: Coord, action: Action) -> Option<Coord> {
        let (dx, dy) = action.delta();
        self.map.offset(from, dx, dy)
    }
}

/// Centroid target: per-axis half-up rounded mean, remapped onto the robots'
/// static-free component (uniform 4-neighbour choice first, then BFS-nearest).
pub fn compute_target<R: Rng>(
    positions: &[Coord],
    map: &GridMap,
    rng: &mut R,
) -> Result<Coord> {
    if positions.is_empty() {
        return Err(Error::Contract("positions must be non-empty".into()));
    }
    let n = positions.len();
    let sum_x: usize = positions.iter().map(|p| p.x).sum();
    let sum_y: usize = positions.iter().map(|p| p.y).sum();
    // Half-up rounding of sum/n without floats: floor((2*sum + n) / (2*n)).
    let cx = (2 * sum_x + n) / (2 * n);
    let cy = (2 * sum_y + n) / (2 * n);
    let centroid = Coord::new(cx.min(map.width() - 1), cy.min(map.height() - 1));

    let component = map.shortest_path_distances(positions[0])?;
    let in_component = |c: Coord| component.reachable(c);
    if in_component(centroid) {
        return Ok(centroid);
    }
    let neighbours: Vec<Coord> = [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)]
        .into_iter()
        .filter_map(|(dx, dy)| map.offset(centroid, dx, dy))
        .filter(|&c| in_component(c))
        .collect();
    if !neighbours.is_empty() {
        return Ok(neighbours[rng.gen_range(0..neighbours.len())]);
    }
    map.nearest_cell_where(centroid, in_component, rng)
}

/// Mask for `robot_index`: stay always valid, each direction valid iff the
/// destination is on-grid and free of static and dynamic obstacles. Other
/// robots never mask; sharing a cell is the goal.
pub fn action_mask(state: &EnvState, map: &GridMap, robot_index: usize) -> [bool; ACTION_COUNT] {
    let pos = state.positions[robot_index];
    let mut mask = [false; ACTION_COUNT];
    for action in crate::gridmap::ACTIONS {
        let i = action.index();
        if action == Action::Stay {
            mask[i] = true;
            continue;
        }
        let (dx, dy) = action.delta();
        mask[i] = match map.offset(pos, dx, dy) {
            Some(dest) => map.is_free(dest),
            None => false,
        };
    }
    mask
}

/// Observation for `robot_index`; see `ObsVector` for layout.
pub fn build_observation(
    state: &EnvState,
    map: &GridMap,
    robot_index: usize,
    cfg: &EnvConfig,
) -> Result<ObsVector> {
    if robot_index >= state.active_count {
        return Err(Error::Contract(format!(
            "robot index {robot_index} >= active count {}",
            state.active_count
        )));
    }
    let scale = cfg.coordinate_scale;
    let own = state.positions[robot_index];
    let mut values = Vec::with_capacity(cfg.obs_len());
    values.push(own.x as f64 / scale);
    values.push(own.y as f64 / scale);
    for (i, &p) in state.positions[..state.active_count].iter().enumerate() {
        if i != robot_index {
            values.push(p.x as f64 / scale);
            values.push(p.y as f64 / scale);
        }
    }
    values.resize(2 * cfg.n_p, 0.0);
    let field = map.shortest_path_distances(own)?;
    let mut sum_dist = 0.0;
    for (i, &p) in state.positions[..state.active_count].iter().enumerate() {
        if i != robot_index {
            let d = field.get(p);
            sum_dist += if d == UNREACHABLE { (map.width() * map.height()) as f64 } else { d as f64 };
        }
    }
    values.push(sum_dist / (scale * cfg.n_p as f64));
    Ok(ObsVector { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::ACTIONS;

    fn empty_cfg(x: usize, y: usize, n_p: usize) -> EnvConfig {
        EnvConfig {
            static_density: 0.0,
            dynamic_density: 0.0,
            n_p,
            ..EnvConfig::defaults(x, y)
        }
    }

    fn state_with(positions: Vec<Coord>, target: Coord) -> EnvState {
        EnvState {
            active_count: positions.len(),
            positions,
            target,
            t: 0,
            done: false,
            prev_potential: 0.0,
        }
    }

    #[test]
    fn config_invariants_enforced() {
        let mut cfg = EnvConfig::defaults(10, 10);
        assert!(cfg.validate().is_ok());
        cfg.r3 = -20.0; // |r3| >= |r2|
        assert!(cfg.validate().is_err());
        let mut cfg = EnvConfig::defaults(10, 10);
        cfg.n_p = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = EnvConfig::defaults(10, 10);
        cfg.r1 = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reward_trichotomy_with_defaults() {
        let cfg = EnvConfig::defaults(10, 10);
        // Approach (potential increases), not met.
        assert_eq!(reward(-3.0, -2.0, false, &cfg), 1.0);
        // Stay, not met.
        assert_eq!(reward(-3.0, -3.0, false, &cfg), -5.0);
        // Retreat, not met.
        assert_eq!(reward(-3.0, -4.0, false, &cfg), -10.0);
        // Terminal versions add r_goal = 10.
        assert_eq!(reward(-1.0, 0.0, true, &cfg), 11.0);
        assert_eq!(reward(0.0, 0.0, true, &cfg), 5.0);
        assert_eq!(reward(0.0, -1.0, true, &cfg), 0.0);
    }

    #[test]
    fn centroid_examples() {
        let map = GridMap::from_static_cells(5, 5, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = compute_target(&[Coord::new(0, 0), Coord::new(2, 2)], &map, &mut rng).unwrap();
        assert_eq!(t, Coord::new(1, 1));
        let t = compute_target(
            &[Coord::new(0, 0), Coord::new(1, 0), Coord::new(2, 0)],
            &map,
            &mut rng,
        )
        .unwrap();
        assert_eq!(t, Coord::new(1, 0));
    }

    #[test]
    fn centroid_on_obstacle_remaps_to_free_neighbour() {
        let map = GridMap::from_static_cells(5, 5, &[Coord::new(2, 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let t = compute_target(&[Coord::new(2, 1), Coord::new(2, 3)], &map, &mut rng).unwrap();
            let manhattan =
                t.x.abs_diff(2) + t.y.abs_diff(2);
            assert_eq!(manhattan, 1, "expected a neighbour of the blocked centroid, got {t:?}");
            assert!(!map.is_static(t));
        }
    }

    #[test]
    fn centroid_half_up_rounding() {
        let map = GridMap::from_static_cells(7, 7, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Mean (0.5, 0.5) rounds half-up to (1, 1).
        let t = compute_target(&[Coord::new(0, 0), Coord::new(1, 1)], &map, &mut rng).unwrap();
        assert_eq!(t, Coord::new(1, 1));
    }

    #[test]
    fn mask_at_corner_and_open_cell() {
        let map = GridMap::from_static_cells(5, 5, &[]);
        let st = state_with(vec![Coord::new(0, 0), Coord::new(4, 4)], Coord::new(2, 2));
        let m = action_mask(&st, &map, 0);
        // up and left off-grid, down/right/stay valid
        assert_eq!(m, [false, true, false, true, true]);

        let st = state_with(vec![Coord::new(2, 2), Coord::new(4, 4)], Coord::new(2, 2));
        assert_eq!(action_mask(&st, &map, 0), [true; 5]);
    }

    #[test]
    fn mask_blocks_dynamic_obstacle() {
        let (map, _) = crate::gridmap::parse_map_text("DMSMAP 1 5 5 0\n.....\n.....\n..D..\n.....\n.....\n").unwrap();
        // Robot immediately left of the dynamic obstacle: right invalid.
        let st = state_with(vec![Coord::new(1, 2), Coord::new(4, 4)], Coord::new(2, 2));
        let m = action_mask(&st, &map, 0);
        assert_eq!(m, [true, true, true, false, true]);
    }

    #[test]
    fn observation_layout_and_scaling() {
        let map = GridMap::from_static_cells(5, 5, &[]);
        let mut cfg = empty_cfg(5, 5, 2);
        cfg.coordinate_scale = 1.0;
        let st = state_with(vec![Coord::new(0, 0), Coord::new(0, 3)], Coord::new(0, 2));
        let obs = build_observation(&st, &map, 0, &cfg).unwrap();
        assert_eq!(obs.values, vec![0.0, 0.0, 0.0, 3.0, 1.5]);

        // Same pair from robot 1's point of view.
        let obs = build_observation(&st, &map, 1, &cfg).unwrap();
        assert_eq!(obs.values, vec![0.0, 3.0, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn observation_padding_count() {
        let map = GridMap::from_static_cells(6, 6, &[]);
        let cfg = empty_cfg(6, 6, 4);
        let st = state_with(vec![Coord::new(1, 1), Coord::new(2, 2)], Coord::new(2, 2));
        let obs = build_observation(&st, &map, 0, &cfg).unwrap();
        assert_eq!(obs.values.len(), 9);
        // Slots for the two absent robots are exactly zero.
        assert_eq!(&obs.values[4..8], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn observation_same_cell_pair_has_zero_sum_distance() {
        let map = GridMap::from_static_cells(5, 5, &[]);
        let cfg = empty_cfg(5, 5, 2);
        let st = state_with(vec![Coord::new(2, 2), Coord::new(2, 2)], Coord::new(2, 2));
        let obs = build_observation(&st, &map, 0, &cfg).unwrap();
        assert_eq!(*obs.values.last().unwrap(), 0.0);
    }

    #[test]
    fn observation_deterministic_and_index_checked() {
        let map = GridMap::from_static_cells(5, 5, &[]);
        let cfg = empty_cfg(5, 5, 3);
        let st = state_with(vec![Coord::new(0, 1), Coord::new(3, 2)], Coord::new(1, 1));
        let a = build_observation(&st, &map, 0, &cfg).unwrap();
        let b = build_observation(&st, &map, 0, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(build_observation(&st, &map, 2, &cfg).is_err());
    }

    #[test]
    fn reset_collapses_range_for_np2_and_is_feasible() {
        let mut env = Env::new(empty_cfg(8, 8, 2), 5).unwrap();
        for _ in 0..50 {
            env.reset().unwrap();
            assert_eq!(env.state().active_count, 2);
            assert!(env
                .map()
                .is_rendezvous_feasible(&env.state().positions)
                .unwrap());
            assert!(!env.map().is_static(env.state().target));
        }
    }

    #[test]
    fn reset_active_count_frequencies() {
        let mut env = Env::new(empty_cfg(10, 10, 5), 6).unwrap();
        let mut counts = [0usize; 6];
        for _ in 0..1000 {
            env.reset().unwrap();
            counts[env.state().active_count] += 1;
        }
        for k in 2..=5 {
            let f = counts[k] as f64 / 1000.0;
            assert!((f - 0.25).abs() < 0.05, "count {k} frequency {f}");
        }
    }

    #[test]
    fn step_requires_unmasked_action() {
        let mut env = Env::new(empty_cfg(6, 6, 2), 7).unwrap();
        env.reset().unwrap();
        let mask = env.learner_mask();
        if let Some(bad) = ACTIONS.iter().find(|a| !mask[a.index()]) {
            assert!(env.step(*bad, OthersPolicy::Frozen).is_err());
        }
    }

    #[test]
    fn stay_with_frozen_others_yields_r3() {
        let mut env = Env::new(empty_cfg(8, 8, 2), 9).unwrap();
        loop {
            env.reset().unwrap();
            // Need a non-terminal start where the learner isn't on the target.
            if env.state().positions[0] != env.state().positions[1] {
                break;
            }
        }
        let out = env.step(Action::Stay, OthersPolicy::Frozen).unwrap();
        // Learner stayed, others frozen: potential unchanged => r3; the
        // target may shift only if the learner was its sole source, which
        // staying cannot cause.
        assert_eq!(out.reward, -5.0);
        assert!(!out.done);
    }

    #[test]
    fn adjacent_pair_meets_with_goal_bonus() {
        // Two robots two cells apart on an empty 5x5; midpoint is the target.
        // The learner approaches, the other robot walks in via the policy; a
        // zeroed network gives uniform probs, so force it with Frozen others
        // and the learner stepping onto the partner's cell over two steps.
        let mut cfg = empty_cfg(5, 5, 2);
        cfg.map_seed = 1;
        let map = GridMap::from_static_cells(5, 5, &[]);
        let mut env = Env::with_map(cfg, map, 11).unwrap();
        env.reset().unwrap();
        // Pin a deterministic layout.
        env.state.positions = vec![Coord::new(1, 2), Coord::new(2, 2)];
        env.state.active_count = 2;
        env.state.target = Coord::new(2, 2);
        let out = env.step(Action::Right, OthersPolicy::Frozen).unwrap();
        assert!(out.done);
        // Approaching terminal step: r_goal + r1 = 11.
        assert_eq!(out.reward, 11.0);
    }

    #[test]
    fn truncation_flag_set_at_budget() {
        let mut cfg = empty_cfg(6, 6, 2);
        cfg.max_episode_steps = 3;
        let map = GridMap::from_static_cells(6, 6, &[]);
        let mut env = Env::with_map(cfg, map, 13).unwrap();
        env.reset().unwrap();
        env.state.positions = vec![Coord::new(0, 0), Coord::new(5, 5)];
        env.state.target = Coord::new(3, 3);
        let mut last = None;
        for _ in 0..3 {
            if env.needs_reset() {
                break;
            }
            last = Some(env.step(Action::Stay, OthersPolicy::Frozen).unwrap());
        }
        let last = last.unwrap();
        assert!(last.info.truncated);
        assert!(!last.done);
    }

    #[test]
    fn mask_soundness_under_random_play() {
        // Random legal actions for many steps; no robot may ever sit on an
        // obstacle cell right after its own move.
        let mut cfg = EnvConfig::defaults(12, 12);
        cfg.static_density = 0.1;
        cfg.dynamic_density = 0.08;
        cfg.n_p = 3;
        cfg.map_seed = 21;
        let mut env = Env::new(cfg, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        env.reset().unwrap();
        for _ in 0..2000 {
            if env.needs_reset() {
                env.reset().unwrap();
            }
            let mask = env.learner_mask();
            let valid: Vec<usize> = (0..ACTION_COUNT).filter(|&i| mask[i]).collect();
            let a = Action::from_index(valid[rng.gen_range(0..valid.len())]).unwrap();
            let learner_before = env.state().positions[0];
            let map_before = env.map().clone();
            env.step(a, OthersPolicy::Frozen).unwrap();
            let learner_after = env.state().positions[0];
            // Landing cell was legal w.r.t. the map at decision time.
            assert!(!map_before.is_static(learner_after));
            if learner_after != learner_before {
                assert!(!map_before.is_dynamic(learner_after));
            }
            // Target stays a free cell in the robots' component.
            assert!(env
                .map()
                .is_rendezvous_feasible(
                    &[env.state().positions[0], env.state().target]
                )
                .unwrap());
        }
    }

    #[test]
    fn greedy_chase_on_empty_map_is_optimal() {
        // With the partner frozen, the only meeting cell is the partner's
        // own, so a learner walking a shortest path to the partner must reach
        // done in exactly the initial Manhattan distance, with the terminal
        // reward fired on the last step. (Chasing the moving centroid is not
        // used as the oracle: the rounded centroid can coincide with the
        // learner's cell and absorb it.) Exhaustive over all start pairs on
        // empty maps up to 6x6.
        for w in 3..=6usize {
            for h in [3usize, 6] {
                let map = GridMap::from_static_cells(w, h, &[]);
                let cells: Vec<Coord> =
                    (0..h).flat_map(|y| (0..w).map(move |x| Coord::new(x, y))).collect();
                for &learner in &cells {
                    for &partner in &cells {
                        if learner == partner {
                            continue;
                        }
                        let mut env =
                            Env::with_map(empty_cfg(w, h, 2), map.clone(), 9).unwrap();
                        env.reset().unwrap();
                        env.state.positions = vec![learner, partner];
                        env.state.active_count = 2;
                        let mut c_rng = ChaCha8Rng::seed_from_u64(1);
                        env.state.target =
                            compute_target(&env.state.positions, &map, &mut c_rng).unwrap();

                        let optimal = learner.x.abs_diff(partner.x) + learner.y.abs_diff(partner.y);
                        let mut steps = 0;
                        let mut last_reward = 0.0;
                        while !env.needs_reset() {
                            let pos = env.state().positions[0];
                            let mask = env.learner_mask();
                            let best = ACTIONS
                                .iter()
                                .filter(|a| mask[a.index()])
                                .min_by_key(|a| {
                                    let (dx, dy) = a.delta();
                                    let dest = env.map().offset(pos, dx, dy).unwrap_or(pos);
                                    let d = dest.x.abs_diff(partner.x)
                                        + dest.y.abs_diff(partner.y);
                                    (d, **a == Action::Stay)
                                })
                                .copied()
                                .unwrap();
                            let out = env.step(best, OthersPolicy::Frozen).unwrap();
                            last_reward = out.reward;
                            steps += 1;
                            assert!(
                                steps <= optimal,
                                "greedy chase exceeded {optimal} steps for \
                                 learner {learner:?}, partner {partner:?}"
                            );
                        }
                        assert!(env.state().done);
                        assert_eq!(steps, optimal);
                        assert_eq!(env.state().positions[0], partner);
                        // The last step approaches the frozen partner's
                        // centroid-free meeting cell; it always terminates
                        // and picks up the goal bonus.
                        assert!(
                            last_reward >= env.config().r_goal + env.config().r2,
                            "terminal reward {last_reward} below floor"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn ablation_reward_tables_hand_values() {
        let cfg = EnvConfig::defaults(10, 10);
        let step = |rule, d_prev, d_new, collision, all_met| {
            variant_reward(rule, &RewardInputs { d_prev, d_new, collision, all_met }, &cfg)
        };
        // Table A rows.
        assert_eq!(step(RewardRule::TableA, 4, 5, true, false), -10.0);
        assert_eq!(step(RewardRule::TableA, 1, 0, false, true), 5.0);
        assert_eq!(step(RewardRule::TableA, 2, 1, false, false), 2.0); // 1 + d_g
        assert_eq!(step(RewardRule::TableA, 5, 4, false, false), 10.0);
        assert_eq!(step(RewardRule::TableA, 5, 7, false, false), -20.0);
        // Table B rows with n_m = 100.
        let b = RewardRule::TableB { n_m: 100.0 };
        assert_eq!(step(b, 3, 3, false, false), -0.1);
        assert_eq!(step(b, 3, 3, true, false), -1.1);
        assert_eq!(step(b, 3, 2, false, false), 19.9);
        assert_eq!(step(b, 1, 0, false, true), 9.9);
        // Table C rows.
        assert_eq!(step(RewardRule::TableC, 1, 0, false, true), 25.0);
        assert_eq!(step(RewardRule::TableC, 3, 3, true, false), -300.0);
        assert_eq!(step(RewardRule::TableC, 3, 2, false, false), -1.0);
    }
}
