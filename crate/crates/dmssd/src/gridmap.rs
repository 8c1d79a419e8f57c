//! Grid maps: obstacle generation, BFS shortest-path distances, connectivity
//! queries and dynamic-obstacle motion.
//!
//! Cells are 4-connected. Static obstacles are permanent walls; dynamic
//! obstacles wander one cell per environment step. Distance and feasibility
//! queries deliberately ignore dynamic obstacles: they move every tick, and
//! collision avoidance against them is handled by action masking instead.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Distance value for cells with no static-free path from the source.
pub const UNREACHABLE: u32 = u32::MAX;

/// A cell coordinate; `x` grows rightward, `y` grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub fn new(x: usize, y: usize) -> Self {
        Coord { x, y }
    }
}

/// Movement actions in the fixed order the policy head emits them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

/// Number of discrete actions.
pub const ACTION_COUNT: usize = 5;

/// All actions in index order.
pub const ACTIONS: [Action; ACTION_COUNT] =
    [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Stay => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        ACTIONS.get(i).copied()
    }

    /// (dx, dy) for this action; up is y-1, left is x-1.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

/// Occupancy grid with static walls and wandering dynamic obstacles.
#[derive(Debug, Clone)]
pub struct GridMap {
    width: usize,
    height: usize,
    statics: Vec<bool>,
    /// Dynamic obstacles in fixed index order; motion is applied in this order.
    dynamics: Vec<Coord>,
    dynamic_occ: Vec<bool>,
    seed: u64,
}

/// BFS distances from one source cell, avoiding static obstacles only.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub source: Coord,
    width: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub fn get(&self, c: Coord) -> u32 {
        self.dist[c.y * self.width + c.x]
    }

    pub fn reachable(&self, c: Coord) -> bool {
        self.get(c) != UNREACHABLE
    }
}

impl GridMap {
    /// Randomly place obstacles: each cell becomes static with probability
    /// `static_density`, each remaining free cell dynamic with probability
    /// `dynamic_density`. Bit-identical regeneration for equal arguments.
    pub fn generate(
        width: usize,
        height: usize,
        static_density: f64,
        dynamic_density: f64,
        seed: u64,
    ) -> Result<GridMap> {
        if width < 3 || height < 3 {
            return Err(Error::Config(format!(
                "map must be at least 3x3, got {width}x{height}"
            )));
        }
        for (name, d) in [("static_density", static_density), ("dynamic_density", dynamic_density)]
        {
            if !(0.0..0.5).contains(&d) {
                return Err(Error::Config(format!("{name} must be in [0, 0.5), got {d}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut statics = vec![false; width * height];
        let mut dynamics = Vec::new();
        for y in 0..height {
            for x in 0..width {
                if rng.gen::<f64>() < static_density {
                    statics[y * width + x] = true;
                } else if rng.gen::<f64>() < dynamic_density {
                    dynamics.push(Coord::new(x, y));
                }
            }
        }
        Ok(GridMap::from_parts(width, height, statics, dynamics, seed))
    }

    fn from_parts(
        width: usize,
        height: usize,
        statics: Vec<bool>,
        dynamics: Vec<Coord>,
        seed: u64,
    ) -> GridMap {
        let mut dynamic_occ = vec![false; width * height];
        for &c in &dynamics {
            dynamic_occ[c.y * width + c.x] = true;
        }
        GridMap { width, height, statics, dynamics, dynamic_occ, seed }
    }

    /// Build a map from explicit static-obstacle cells (mostly for tests).
    pub fn from_static_cells(width: usize, height: usize, cells: &[Coord]) -> GridMap {
        let mut statics = vec![false; width * height];
        for &c in cells {
            statics[c.y * width + c.x] = true;
        }
        GridMap::from_parts(width, height, statics, Vec::new(), 0)
    }

    fn idx(&self, c: Coord) -> usize {
        c.y * self.width + c.x
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn is_static(&self, c: Coord) -> bool {
        self.statics[self.idx(c)]
    }

    pub fn is_dynamic(&self, c: Coord) -> bool {
        self.dynamic_occ[self.idx(c)]
    }

    /// Free of both static and dynamic obstacles.
    pub fn is_free(&self, c: Coord) -> bool {
        !self.is_static(c) && !self.is_dynamic(c)
    }

    pub fn dynamics(&self) -> &[Coord] {
        &self.dynamics
    }

    pub fn static_count(&self) -> usize {
        self.statics.iter().filter(|&&b| b).count()
    }

    /// Neighbour of `c` in direction `(dx, dy)` if it stays on the grid.
    pub fn offset(&self, c: Coord, dx: isize, dy: isize) -> Option<Coord> {
        let x = c.x.checked_add_signed(dx)?;
        let y = c.y.checked_add_signed(dy)?;
        let n = Coord::new(x, y);
        self.in_bounds(n).then_some(n)
    }

    fn neighbours(&self, c: Coord) -> impl Iterator<Item = Coord> + '_ {
        [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)]
            .into_iter()
            .filter_map(move |(dx, dy)| self.offset(c, dx, dy))
    }

    /// BFS distances from `source` over 4-neighbour moves, avoiding static
    /// obstacles only.
    pub fn shortest_path_distances(&self, source: Coord) -> Result<DistanceField> {
        if self.is_static(source) {
            return Err(Error::Contract(format!(
                "BFS source ({}, {}) is a static obstacle",
                source.x, source.y
            )));
        }
        let mut dist = vec![UNREACHABLE; self.width * self.height];
        dist[self.idx(source)] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(source);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.idx(c)];
            for n in self.neighbours(c) {
                let i = self.idx(n);
                if !self.statics[i] && dist[i] == UNREACHABLE {
                    dist[i] = d + 1;
                    queue.push_back(n);
                }
            }
        }
        Ok(DistanceField { source, width: self.width, dist })
    }

    /// True iff all positions lie in one 4-connected static-free component.
    pub fn is_rendezvous_feasible(&self, positions: &[Coord]) -> Result<bool> {
        if positions.is_empty() {
            return Err(Error::Contract("positions must be non-empty".into()));
        }
        for &p in positions {
            if self.is_static(p) {
                return Err(Error::Contract(format!(
                    "position ({}, {}) is on a static obstacle",
                    p.x, p.y
                )));
            }
        }
        let field = self.shortest_path_distances(positions[0])?;
        Ok(positions.iter().all(|&p| field.reachable(p)))
    }

    /// Move every dynamic obstacle one step: uniform over {stay} plus the
    /// 4-neighbours free of static obstacles and of any (already moved)
    /// obstacle. Applied in fixed obstacle-index order.
    pub fn step_dynamic_obstacles<R: Rng>(&mut self, rng: &mut R) {
        for i in 0..self.dynamics.len() {
            let cur = self.dynamics[i];
            let mut choices = [cur; 5];
            let mut n_choices = 1;
            for (dx, dy) in [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)] {
                if let Some(n) = self.offset(cur, dx, dy) {
                    let j = self.idx(n);
                    if !self.statics[j] && !self.dynamic_occ[j] {
                        choices[n_choices] = n;
                        n_choices += 1;
                    }
                }
            }
            let next = choices[rng.gen_range(0..n_choices)];
            if next != cur {
                let (ci, ni) = (self.idx(cur), self.idx(next));
                self.dynamic_occ[ci] = false;
                self.dynamic_occ[ni] = true;
                self.dynamics[i] = next;
            }
        }
    }

    /// Nearest cell satisfying `pred`, searching outward from `start` across
    /// all in-bounds cells (obstacles are traversable for this search).
    /// Ties within one BFS ring are broken uniformly by `rng`.
    pub fn nearest_cell_where<R: Rng>(
        &self,
        start: Coord,
        pred: impl Fn(Coord) -> bool,
        rng: &mut R,
    ) -> Result<Coord> {
        if pred(start) {
            return Ok(start);
        }
        let mut seen = vec![false; self.width * self.height];
        seen[self.idx(start)] = true;
        let mut ring = vec![start];
        while !ring.is_empty() {
            let mut next_ring = Vec::new();
            let mut hits = Vec::new();
            for &c in &ring {
                for n in self.neighbours(c) {
                    let i = self.idx(n);
                    if !seen[i] {
                        seen[i] = true;
                        if pred(n) {
                            hits.push(n);
                        }
                        next_ring.push(n);
                    }
                }
            }
            if !hits.is_empty() {
                return Ok(hits[rng.gen_range(0..hits.len())]);
            }
            ring = next_ring;
        }
        Err(Error::MapDegenerate("no cell satisfies the predicate".into()))
    }

    /// If `cell` is static-free return it; else uniformly pick a static-free
    /// 4-neighbour; else the nearest static-free cell by BFS.
    pub fn nearest_free_cell<R: Rng>(&self, cell: Coord, rng: &mut R) -> Result<Coord> {
        if !self.is_static(cell) {
            return Ok(cell);
        }
        let free: Vec<Coord> = self.neighbours(cell).filter(|&n| !self.is_static(n)).collect();
        if !free.is_empty() {
            return Ok(free[rng.gen_range(0..free.len())]);
        }
        self.nearest_cell_where(cell, |c| !self.is_static(c), rng)
            .map_err(|_| Error::MapDegenerate("map has no free cell".into()))
    }

    /// Static-free cells of the component containing `origin`, in row-major order.
    pub fn component_cells(&self, origin: Coord) -> Result<Vec<Coord>> {
        let field = self.shortest_path_distances(origin)?;
        let mut cells = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Coord::new(x, y);
                if field.reachable(c) {
                    cells.push(c);
                }
            }
        }
        Ok(cells)
    }

    /// Serialize to the line-oriented map file format.
    pub fn to_map_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "DMSMAP 1 {} {} {}", self.width, self.height, self.seed);
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Coord::new(x, y);
                out.push(if self.is_static(c) {
                    '#'
                } else if self.is_dynamic(c) {
                    'D'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Parse the map file format; returns the map and any `R` robot spawn hints.
pub fn parse_map_text(text: &str) -> Result<(GridMap, Vec<Coord>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty map file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "DMSMAP" || parts[1] != "1" {
        return Err(Error::Parse(format!("bad map header: {header:?}")));
    }
    let width: usize =
        parts[2].parse().map_err(|_| Error::Parse(format!("bad width: {}", parts[2])))?;
    let height: usize =
        parts[3].parse().map_err(|_| Error::Parse(format!("bad height: {}", parts[3])))?;
    let seed: u64 =
        parts[4].parse().map_err(|_| Error::Parse(format!("bad seed: {}", parts[4])))?;
    let mut statics = vec![false; width * height];
    let mut dynamics = Vec::new();
    let mut hints = Vec::new();
    let mut rows = 0;
    for (y, line) in lines.enumerate() {
        if y >= height {
            return Err(Error::Parse(format!("too many rows, expected {height}")));
        }
        if line.chars().count() != width {
            return Err(Error::Parse(format!(
                "ragged row {y}: expected {width} cells, got {}",
                line.chars().count()
            )));
        }
        for (x, ch) in line.chars().enumerate() {
            let c = Coord::new(x, y);
            match ch {
                '.' => {}
                '#' => statics[y * width + x] = true,
                'D' => dynamics.push(c),
                'R' => hints.push(c),
                other => return Err(Error::Parse(format!("bad cell {other:?} at ({x}, {y})"))),
            }
        }
        rows += 1;
    }
    if rows != height {
        return Err(Error::Parse(format!("expected {height} rows, got {rows}")));
    }
    Ok((GridMap::from_parts(width, height, statics, dynamics, seed), hints))
}
