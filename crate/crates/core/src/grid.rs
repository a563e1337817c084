//! Turn-based two-entity grid world.
//!
//! A human and an agent share one grid and alternate single-cell moves. The
//! human tries to reach one of the goal cells on the top row; the episode ends
//! when the human enters its goal or when either mover steps onto the other's
//! cell. Off-grid and blocked moves are masked out of the action set rather
//! than clamped, so every legal action has a distinct effect.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid coordinate: `x` counts columns left to right, `y` counts rows top to
/// bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn offset(self, action: Action) -> Cell {
        let (dx, dy) = action.delta();
        Cell::new(self.x + dx, self.y + dy)
    }
}

impl From<[i32; 2]> for Cell {
    fn from([x, y]: [i32; 2]) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Stay => "stay",
        }
    }
}

impl std::str::FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown action {s:?}")))
    }
}

/// A subset of [`Action::ALL`], iterated in canonical order.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub fn empty() -> Self {
        ActionSet(0)
    }

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut set = ActionSet::empty();
        for a in iter {
            set.insert(a);
        }
        set
    }
}

impl fmt::Debug for ActionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Status {
    Active,
    GoalReached,
    Collided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub human: Cell,
    pub agent: Cell,
    pub status: Status,
}

impl EnvState {
    pub fn active(human: Cell, agent: Cell) -> Self {
        EnvState {
            human,
            agent,
            status: Status::Active,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub width: i32,
    pub height: i32,
    pub goal_cells: Vec<Cell>,
    pub human_start_cells: Vec<Cell>,
    pub agent_spawn_region: Vec<Cell>,
    #[serde(default)]
    pub blocked_cells: Vec<Cell>,
}

impl Default for GridConfig {
    /// 9×9 grid, three goals along the top row, three human starts along the
    /// bottom row and a 3×3 agent spawn block in the middle.
    fn default() -> Self {
        let spawn = (3..=5)
            .flat_map(|y| (3..=5).map(move |x| Cell::new(x, y)))
            .collect();
        GridConfig {
            width: 9,
            height: 9,
            goal_cells: vec![Cell::new(0, 0), Cell::new(4, 0), Cell::new(8, 0)],
            human_start_cells: vec![Cell::new(0, 8), Cell::new(4, 8), Cell::new(8, 8)],
            agent_spawn_region: spawn,
            blocked_cells: Vec::new(),
        }
    }
}

impl GridConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: GridConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("grid config is always representable as TOML")
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        (0..self.width).contains(&c.x) && (0..self.height).contains(&c.y)
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked_cells.contains(&c)
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.is_blocked(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::InvalidConfig(format!(
                "grid must be at least 3x3, got {}x{}",
                self.width, self.height
            )));
        }
        for c in &self.blocked_cells {
            if !self.in_bounds(*c) {
                return Err(Error::InvalidConfig(format!(
                    "blocked cell {c} is out of bounds"
                )));
            }
        }
        let named = [
            ("goal", &self.goal_cells),
            ("human start", &self.human_start_cells),
            ("agent spawn", &self.agent_spawn_region),
        ];
        for (what, cells) in named {
            if cells.is_empty() {
                return Err(Error::InvalidConfig(format!("no {what} cells")));
            }
            for (i, c) in cells.iter().enumerate() {
                if !self.is_free(*c) {
                    return Err(Error::InvalidConfig(format!(
                        "{what} cell {c} is out of bounds or blocked"
                    )));
                }
                if cells[..i].contains(c) {
                    return Err(Error::InvalidConfig(format!("duplicate {what} cell {c}")));
                }
            }
        }
        if let Some(c) = self.goal_cells.iter().find(|c| c.y != 0) {
            return Err(Error::InvalidConfig(format!(
                "goal {c} is not on the top row"
            )));
        }
        if let Some(c) = self
            .human_start_cells
            .iter()
            .find(|c| self.goal_cells.contains(c))
        {
            return Err(Error::InvalidConfig(format!(
                "human start {c} is a goal cell"
            )));
        }
        if let Some(c) = self
            .agent_spawn_region
            .iter()
            .find(|c| self.human_start_cells.contains(c))
        {
            return Err(Error::InvalidConfig(format!(
                "agent spawn cell {c} overlaps a human start"
            )));
        }
        Ok(())
    }

    pub fn goal_index(&self, goal: Cell) -> Option<usize> {
        self.goal_cells.iter().position(|g| *g == goal)
    }
}

pub fn legal_actions(config: &GridConfig, pos: Cell) -> Result<ActionSet> {
    if !config.in_bounds(pos) {
        return Err(Error::OutOfBounds(pos));
    }
    Ok(Action::ALL
        .into_iter()
        .filter(|a| *a == Action::Stay || config.is_free(pos.offset(*a)))
        .collect())
}

fn check_move(config: &GridConfig, s: &EnvState, mover: Cell, a: Action) -> Result<Cell> {
    if !s.is_active() {
        return Err(Error::NotActive(s.status));
    }
    if !legal_actions(config, mover)?.contains(a) {
        return Err(Error::IllegalAction {
            action: a,
            cell: mover,
        });
    }
    Ok(mover.offset(a))
}

/// Human half of a turn. The agent does not move.
pub fn apply_human_move(
    config: &GridConfig,
    s: &EnvState,
    a_h: Action,
    goal: Cell,
) -> Result<EnvState> {
    let human = check_move(config, s, s.human, a_h)?;
    let status = if human == s.agent {
        Status::Collided
    } else if human == goal {
        Status::GoalReached
    } else {
        Status::Active
    };
    Ok(EnvState {
        human,
        agent: s.agent,
        status,
    })
}

/// Agent half of a turn. The human does not move.
pub fn apply_agent_move(config: &GridConfig, s: &EnvState, a_r: Action) -> Result<EnvState> {
    let agent = check_move(config, s, s.agent, a_r)?;
    let status = if agent == s.human {
        Status::Collided
    } else {
        Status::Active
    };
    Ok(EnvState {
        human: s.human,
        agent,
        status,
    })
}

/// All active `(human, agent)` placements with distinct cells, human-major in
/// row-major cell order.
pub fn enumerate_states(config: &GridConfig) -> Vec<EnvState> {
    let space = StateSpace::new(config);
    space.states().collect()
}

/// Dense indexing of `(human, agent)` cell pairs for value tables.
///
/// Pair `(h, a)` lives at `h * n + a` where `n` is the number of free cells;
/// the diagonal `h == a` is allocated but never an active state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    width: i32,
    height: i32,
    cells: Vec<Cell>,
    lookup: Vec<Option<usize>>,
}

impl StateSpace {
    pub fn new(config: &GridConfig) -> Self {
        let mut cells = Vec::new();
        let mut lookup = vec![None; (config.width * config.height) as usize];
        for y in 0..config.height {
            for x in 0..config.width {
                let c = Cell::new(x, y);
                if !config.is_blocked(c) {
                    lookup[(y * config.width + x) as usize] = Some(cells.len());
                    cells.push(c);
                }
            }
        }
        StateSpace {
            width: config.width,
            height: config.height,
            cells,
            lookup,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn table_len(&self) -> usize {
        self.cells.len() * self.cells.len()
    }

    pub fn cell(&self, i: usize) -> Cell {
        self.cells[i]
    }

    pub fn cell_index(&self, c: Cell) -> Option<usize> {
        if c.x < 0 || c.y < 0 || c.x >= self.width || c.y >= self.height {
            return None;
        }
        self.lookup[(c.y * self.width + c.x) as usize]
    }

    pub fn pair_index(&self, human: Cell, agent: Cell) -> Option<usize> {
        let h = self.cell_index(human)?;
        let a = self.cell_index(agent)?;
        (h != a).then_some(h * self.cells.len() + a)
    }

    /// Index of an active state, or `None` for terminal or unknown placements.
    pub fn index_of(&self, s: &EnvState) -> Option<usize> {
        if !s.is_active() {
            return None;
        }
        self.pair_index(s.human, s.agent)
    }

    pub fn state_at(&self, idx: usize) -> Option<EnvState> {
        let n = self.cells.len();
        let (h, a) = (idx / n, idx % n);
        (h != a && h < n).then(|| EnvState::active(self.cells[h], self.cells[a]))
    }

    pub fn states(&self) -> impl Iterator<Item = EnvState> + '_ {
        (0..self.table_len()).filter_map(|i| self.state_at(i))
    }
}
