use std::collections::VecDeque;

use super::task::{EnvVariant, RewardKind, TaskId, TaskSpec, VariantKind};
use crate::error::{Error, Result};
use crate::rng::{mix64, Namespace, Rng};

pub const GRID_SIZE: usize = 9;
pub const HORIZON: usize = 120;
pub const NUM_ACTIONS: usize = 6;
pub const WINDOW: usize = 5;
pub const NUM_CELL_KINDS: usize = 5;
pub const OBS_DIM: usize = 2 + WINDOW * WINDOW * NUM_CELL_KINDS + 3 + 1;
/// Resources consumed by one craft.
pub const CRAFT_COST: u32 = 3;
/// Manhattan distance from spawn at which explore starts paying.
pub const EXPLORE_RADIUS: usize = 4;

// at most one pickup per step, so the feature never saturates
const RESOURCE_CAP: f64 = HORIZON as f64;
const ITEM_CAP: f64 = 4.0;
const MOB_MOVE_PROB: f64 = 1.0;
const MOB_FLEE_PROB: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty = 0,
    Wall = 1,
    Resource = 2,
    Bench = 3,
    Marker = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Interact = 4,
    Craft = 5,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Interact,
        Action::Craft,
    ];

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::contract(format!("action id {i} out of range 0..{NUM_ACTIONS}")))
    }

    fn delta(self) -> Option<(isize, isize)> {
        match self {
            Action::Up => Some((0, -1)),
            Action::Down => Some((0, 1)),
            Action::Left => Some((-1, 0)),
            Action::Right => Some((1, 0)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub fn new(x: usize, y: usize) -> Self {
        Pos { x, y }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Inventory {
    pub resource: u32,
    pub product: u32,
    pub tool: u32,
}

impl Inventory {
    /// A tool or its equivalent product substitute.
    pub fn has_implement(&self) -> bool {
        self.tool > 0 || self.product > 0
    }
}

/// Fixed-length feature vector; see [`OBS_DIM`].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
}

impl Observation {
    pub fn position(&self) -> (f64, f64) {
        (self.features[0], self.features[1])
    }

    /// Cell kind one-hot at window offset `(dx, dy)`, each in `-2..=2`.
    pub fn window_kind(&self, dx: isize, dy: isize) -> Option<usize> {
        let half = (WINDOW / 2) as isize;
        let wx = (dx + half) as usize;
        let wy = (dy + half) as usize;
        let base = 2 + (wy * WINDOW + wx) * NUM_CELL_KINDS;
        (0..NUM_CELL_KINDS).find(|&k| self.features[base + k] > 0.5)
    }

    /// Inventory counts decoded from the normalized features.
    pub fn inventory(&self) -> Inventory {
        let base = 2 + WINDOW * WINDOW * NUM_CELL_KINDS;
        Inventory {
            resource: (self.features[base] * RESOURCE_CAP).round() as u32,
            product: (self.features[base + 1] * ITEM_CAP).round() as u32,
            tool: (self.features[base + 2] * ITEM_CAP).round() as u32,
        }
    }

    pub fn step_fraction(&self) -> f64 {
        self.features[OBS_DIM - 1]
    }
}

/// Deterministic goal-conditioned gridworld.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub task: TaskSpec,
    pub variant: EnvVariant,
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
    pub agent: Pos,
    pub facing: Action,
    pub inventory: Inventory,
    pub mobs: Vec<Pos>,
    pub step: usize,
    pub horizon: usize,
    pub spawn: Pos,
    visited: Vec<bool>,
    pub total_reward: f64,
    pub success: bool,
    done: bool,
    rng: Rng,
}

impl GridWorld {
    pub fn cell(&self, p: Pos) -> Cell {
        self.cells[p.y * self.width + p.x]
    }

    fn set_cell(&mut self, p: Pos, c: Cell) {
        self.cells[p.y * self.width + p.x] = c;
    }

    pub fn in_bounds(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn passable(&self, p: Pos) -> bool {
        self.cell(p) != Cell::Wall
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn visited(&self, p: Pos) -> bool {
        self.visited[p.y * self.width + p.x]
    }

    pub fn cells_of(&self, kind: Cell) -> Vec<Pos> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.cell(Pos::new(x, y)) == kind {
                    out.push(Pos::new(x, y));
                }
            }
        }
        out
    }

    pub fn neighbor(&self, p: Pos, action: Action) -> Option<Pos> {
        let (dx, dy) = action.delta()?;
        let (nx, ny) = (p.x as isize + dx, p.y as isize + dy);
        if !self.in_bounds(nx, ny) {
            return None;
        }
        let q = Pos::new(nx as usize, ny as usize);
        self.passable(q).then_some(q)
    }

    /// Whether the cell counts toward the explore reward.
    pub fn is_distant(&self, p: Pos) -> bool {
        p.manhattan(self.spawn) >= EXPLORE_RADIUS
    }

    pub fn observe(&self) -> Observation {
        let mut f = vec![0.0; OBS_DIM];
        f[0] = self.agent.x as f64 / (self.width - 1) as f64;
        f[1] = self.agent.y as f64 / (self.height - 1) as f64;
        let half = (WINDOW / 2) as isize;
        for wy in 0..WINDOW {
            for wx in 0..WINDOW {
                let x = self.agent.x as isize + wx as isize - half;
                let y = self.agent.y as isize + wy as isize - half;
                let kind = if !self.in_bounds(x, y) {
                    Cell::Wall
                } else {
                    let p = Pos::new(x as usize, y as usize);
                    // mobs share the marker channel; hunt worlds hold no markers
                    if self.mobs.contains(&p) {
                        Cell::Marker
                    } else {
                        self.cell(p)
                    }
                };
                f[2 + (wy * WINDOW + wx) * NUM_CELL_KINDS + kind as usize] = 1.0;
            }
        }
        let base = 2 + WINDOW * WINDOW * NUM_CELL_KINDS;
        f[base] = (self.inventory.resource as f64).min(RESOURCE_CAP) / RESOURCE_CAP;
        f[base + 1] = (self.inventory.product as f64).min(ITEM_CAP) / ITEM_CAP;
        f[base + 2] = (self.inventory.tool as f64).min(ITEM_CAP) / ITEM_CAP;
        f[OBS_DIM - 1] = self.step as f64 / self.horizon as f64;
        Observation { features: f }
    }

    /// Advance one step. Errors when the episode is already over or the action is invalid.
    pub fn step(&mut self, action: usize) -> Result<(Observation, f64, bool)> {
        if self.done {
            return Err(Error::contract("step called on a finished episode"));
        }
        let action = Action::from_index(action)?;
        let mut reward = 0.0;
        match action {
            Action::Up | Action::Down | Action::Left | Action::Right => {
                self.facing = action;
                if let Some(q) = self.neighbor(self.agent, action) {
                    self.agent = q;
                }
            }
            Action::Interact => reward += self.interact(),
            Action::Craft => reward += self.craft(),
        }
        self.move_mobs();
        if self.task.id == TaskId::Explore {
            let i = self.agent.y * self.width + self.agent.x;
            if !self.visited[i] && self.is_distant(self.agent) {
                reward += 1.0;
            }
        }
        let i = self.agent.y * self.width + self.agent.x;
        self.visited[i] = true;
        self.step += 1;
        self.total_reward += reward;
        if self.task.reward_kind == RewardKind::Count && self.task.is_success(self.total_reward) {
            self.success = true;
        }
        let binary_done = self.task.reward_kind == RewardKind::Binary && self.success;
        self.done = binary_done || self.step >= self.horizon;
        Ok((self.observe(), reward, self.done))
    }

    fn interact(&mut self) -> f64 {
        let here = self.cell(self.agent);
        match (self.task.id, here) {
            (_, Cell::Resource) => {
                self.inventory.resource += 1;
                self.set_cell(self.agent, Cell::Empty);
                if self.task.id == TaskId::Collect {
                    self.respawn_resource();
                    1.0
                } else {
                    0.0
                }
            }
            (TaskId::Place, Cell::Marker)
                if self.inventory.resource > 0 && self.inventory.has_implement() =>
            {
                self.inventory.resource -= 1;
                self.complete()
            }
            (TaskId::Hunt, _) if self.inventory.has_implement() => {
                let agent = self.agent;
                if let Some(i) = self.mobs.iter().position(|m| m.manhattan(agent) <= 1) {
                    self.mobs.remove(i);
                    self.complete()
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }

    fn craft(&mut self) -> f64 {
        if self.cell(self.agent) == Cell::Bench
            && self.inventory.resource >= CRAFT_COST
            && self.inventory.has_implement()
        {
            self.inventory.resource -= CRAFT_COST;
            self.inventory.product += 1;
            if self.task.id == TaskId::Craft {
                return self.complete();
            }
        }
        0.0
    }

    fn complete(&mut self) -> f64 {
        if self.task.reward_kind == RewardKind::Binary && !self.success {
            self.success = true;
            1.0
        } else {
            0.0
        }
    }

    /// Collect keeps a constant number of resources on the map.
    fn respawn_resource(&mut self) {
        let agent = self.agent;
        let free: Vec<Pos> = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| Pos::new(x, y)))
            .filter(|&p| p != agent && self.cell(p) == Cell::Empty)
            .collect();
        if !free.is_empty() {
            let p = free[self.rng.below(free.len())];
            self.set_cell(p, Cell::Resource);
        }
    }

    /// Each mob moves with probability `MOB_MOVE_PROB`: away from the agent
    /// with probability `MOB_FLEE_PROB`, otherwise in a random direction.
    fn move_mobs(&mut self) {
        for i in 0..self.mobs.len() {
            if !self.rng.chance(MOB_MOVE_PROB) {
                continue;
            }
            let mob = self.mobs[i];
            let next = if self.rng.chance(MOB_FLEE_PROB) {
                let here = mob.manhattan(self.agent);
                let away: Vec<Pos> = Action::ALL[..4]
                    .iter()
                    .filter_map(|&d| self.neighbor(mob, d))
                    .filter(|q| q.manhattan(self.agent) > here)
                    .collect();
                (!away.is_empty()).then(|| away[self.rng.below(away.len())])
            } else {
                let dir = Action::ALL[self.rng.below(4)];
                self.neighbor(mob, dir)
            };
            if let Some(q) = next {
                self.mobs[i] = q;
            }
        }
    }
}

/// Build the initial world for `(task, variant, seed)`; identical inputs give identical worlds.
pub fn env_reset(task: TaskId, variant: EnvVariant, seed: u64) -> (GridWorld, Observation) {
    let world = generate(task, variant, seed);
    let obs = world.observe();
    (world, obs)
}

struct Layout {
    walls: usize,
    clustered: bool,
}

fn resource_count(task: TaskId) -> usize {
    match task {
        TaskId::Collect => 8,
        TaskId::Craft => 5,
        TaskId::Place => 3,
        TaskId::Explore | TaskId::Hunt => 0,
    }
}

const BENCH_CORNER: Pos = Pos {
    x: GRID_SIZE - 1,
    y: GRID_SIZE - 1,
};
const MARKER_CORNER: Pos = Pos { x: 0, y: 0 };

fn generate(task: TaskId, variant: EnvVariant, seed: u64) -> GridWorld {
    let salt = mix64(variant.seed ^ (variant.kind as u64).wrapping_mul(0x9e37_79b9));
    let mut rng = match variant.kind {
        VariantKind::OodSeedSpawn => Rng::substream(seed ^ salt, Namespace::World, 1),
        _ => Rng::substream(seed, Namespace::World, 0),
    };
    let mut perturb = Rng::substream(seed ^ salt, Namespace::Variant, variant.kind as u64);
    let layout = if variant.kind == VariantKind::OodLayout {
        Layout {
            walls: 14,
            clustered: true,
        }
    } else {
        Layout {
            walls: 6,
            clustered: false,
        }
    };
    let (w, h) = (GRID_SIZE, GRID_SIZE);
    let all: Vec<Pos> = (0..h)
        .flat_map(|y| (0..w).map(move |x| Pos::new(x, y)))
        .collect();

    let spawn = if variant.kind == VariantKind::OodSeedSpawn {
        all[rng.below(all.len())]
    } else {
        Pos::new(w / 2, h / 2)
    };

    let mut fixed: Vec<(Pos, Cell)> = Vec::new();
    let object = match task {
        TaskId::Craft => Some((BENCH_CORNER, Cell::Bench)),
        TaskId::Place => Some((MARKER_CORNER, Cell::Marker)),
        _ => None,
    };
    if let Some((corner, kind)) = object {
        let p = if variant.kind == VariantKind::OodObjectLocation {
            let edges: Vec<Pos> = all
                .iter()
                .copied()
                .filter(|p| {
                    let on_edge = p.x == 0 || p.y == 0 || p.x == w - 1 || p.y == h - 1;
                    let corner = (p.x == 0 || p.x == w - 1) && (p.y == 0 || p.y == h - 1);
                    on_edge && !corner && *p != spawn
                })
                .collect();
            edges[perturb.below(edges.len())]
        } else if corner == spawn {
            // only possible with a random spawn; use the opposite corner
            Pos::new(w - 1 - corner.x, h - 1 - corner.y)
        } else {
            corner
        };
        fixed.push((p, kind));
    }

    let mut cells = vec![Cell::Empty; w * h];
    for &(p, kind) in &fixed {
        cells[p.y * w + p.x] = kind;
    }
    place_walls(&mut cells, w, h, spawn, layout.walls, &mut rng);

    let n_res = resource_count(task);
    let free: Vec<Pos> = all
        .iter()
        .copied()
        .filter(|p| cells[p.y * w + p.x] == Cell::Empty && *p != spawn)
        .collect();
    let chosen = if layout.clustered {
        clustered_pick(&free, n_res, &mut rng)
    } else {
        let mut pool = free.clone();
        rng.shuffle(&mut pool);
        pool.truncate(n_res);
        pool
    };
    for p in &chosen {
        cells[p.y * w + p.x] = Cell::Resource;
    }

    let mut mobs = Vec::new();
    if task == TaskId::Hunt {
        let far: Vec<Pos> = free
            .iter()
            .copied()
            .filter(|p| p.manhattan(spawn) >= 4)
            .collect();
        let pool = if far.is_empty() { &free } else { &far };
        mobs.push(pool[rng.below(pool.len())]);
    }

    let mut inventory = Inventory::default();
    if task.carries_tool() {
        if variant.kind == VariantKind::OodInventory {
            inventory.product = 1;
        } else {
            inventory.tool = 1;
        }
    }

    let mut visited = vec![false; w * h];
    visited[spawn.y * w + spawn.x] = true;
    GridWorld {
        task: task.spec(),
        variant,
        width: w,
        height: h,
        cells,
        agent: spawn,
        facing: Action::Up,
        inventory,
        mobs,
        step: 0,
        horizon: HORIZON,
        spawn,
        visited,
        total_reward: 0.0,
        success: false,
        done: false,
        rng: Rng::substream(seed ^ salt, Namespace::World, 2),
    }
}

/// Scatter walls on empty cells, retrying until every open cell is reachable from spawn.
fn place_walls(cells: &mut [Cell], w: usize, h: usize, spawn: Pos, count: usize, rng: &mut Rng) {
    for _ in 0..64 {
        let candidates: Vec<usize> = (0..w * h)
            .filter(|&i| cells[i] == Cell::Empty && i != spawn.y * w + spawn.x)
            .collect();
        let mut pool = candidates.clone();
        rng.shuffle(&mut pool);
        pool.truncate(count);
        for &i in &pool {
            cells[i] = Cell::Wall;
        }
        if fully_connected(cells, w, h, spawn) {
            return;
        }
        for &i in &pool {
            cells[i] = Cell::Empty;
        }
    }
}

fn fully_connected(cells: &[Cell], w: usize, h: usize, start: Pos) -> bool {
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([start]);
    seen[start.y * w + start.x] = true;
    let mut reached = 1;
    while let Some(p) = queue.pop_front() {
        for (dx, dy) in [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)] {
            let (x, y) = (p.x as isize + dx, p.y as isize + dy);
            if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
                continue;
            }
            let i = y as usize * w + x as usize;
            if !seen[i] && cells[i] != Cell::Wall {
                seen[i] = true;
                reached += 1;
                queue.push_back(Pos::new(x as usize, y as usize));
            }
        }
    }
    reached == cells.iter().filter(|c| **c != Cell::Wall).count()
}

fn clustered_pick(free: &[Pos], n: usize, rng: &mut Rng) -> Vec<Pos> {
    if n == 0 || free.is_empty() {
        return Vec::new();
    }
    let center = free[rng.below(free.len())];
    let mut ranked: Vec<(usize, u64, Pos)> = free
        .iter()
        .map(|&p| {
            let d = p.x.abs_diff(center.x).max(p.y.abs_diff(center.y));
            (d, rng.next_u64(), p)
        })
        .collect();
    ranked.sort();
    ranked.into_iter().take(n).map(|(_, _, p)| p).collect()
}
