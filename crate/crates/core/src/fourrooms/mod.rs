//! The Four Rooms gridworld: layout, dynamics and the exact MDP behind it.

mod experiment;
mod stats;

pub use experiment::{
    behavior_action, evaluate, max_q_error, q_table_of, results_csv_header, run_experiment, run_sweep,
    true_q_of_greedy, write_results_csv, EpisodeResult, EvalReport, ExactOracle, ExperimentConfig, ResultRow,
};
pub use stats::{mann_whitney_less, midranks};

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::qlearn::StateEncoding;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const N_ACTIONS: usize = 4;
pub const ACTION_NAMES: [&str; N_ACTIONS] = ["up", "down", "left", "right"];

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_EPISODE_CAP: usize = 500;

/// `#` wall, `.` floor, `S` start, `G` goal. The outer ring is wall.
pub const LAYOUT: [&str; 13] = [
    "#############",
    "#G....#.....#",
    "#.....#.....#",
    "#...........#",
    "#.....#.....#",
    "#.....#.....#",
    "##.####.....#",
    "#.....###.###",
    "#.....#.....#",
    "#.....#.....#",
    "#...........#",
    "#.....#....S#",
    "#############",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tile {
    Wall,
    Floor,
    Start,
    Goal,
}

impl Tile {
    fn from_char(c: char) -> Result<Tile> {
        Ok(match c {
            '#' => Tile::Wall,
            '.' => Tile::Floor,
            'S' => Tile::Start,
            'G' => Tile::Goal,
            other => return Err(Error::invalid(format!("unknown layout code {other:?}"))),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct LayoutFile {
    grid: Vec<String>,
}

/// Walkable cells are numbered row-major; that number is the state index.
#[derive(Clone, Debug)]
pub struct FourRoomsEnv {
    rows: usize,
    cols: usize,
    tiles: Vec<Tile>,
    index: Vec<Option<usize>>,
    cells: Vec<(usize, usize)>,
    start: usize,
    goal: usize,
    gamma: f64,
    episode_cap: usize,
}

impl FourRoomsEnv {
    pub fn canonical() -> FourRoomsEnv {
        FourRoomsEnv::from_rows(&LAYOUT).expect("built-in layout is valid")
    }

    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<FourRoomsEnv> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().chars().count());
        if n_rows < 3 || rows.iter().any(|r| r.as_ref().chars().count() != n_cols) {
            return Err(Error::invalid("layout rows must be nonempty and of equal length"));
        }
        let mut tiles = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            for c in r.as_ref().chars() {
                tiles.push(Tile::from_char(c)?);
            }
        }
        let mut index = vec![None; tiles.len()];
        let mut cells = Vec::new();
        let (mut start, mut goal) = (Vec::new(), Vec::new());
        for (k, t) in tiles.iter().enumerate() {
            let (r, c) = (k / n_cols, k % n_cols);
            if *t == Tile::Wall {
                continue;
            }
            if r == 0 || c == 0 || r + 1 == n_rows || c + 1 == n_cols {
                return Err(Error::invalid(format!("walkable cell ({r}, {c}) on the border")));
            }
            index[k] = Some(cells.len());
            match t {
                Tile::Start => start.push(cells.len()),
                Tile::Goal => goal.push(cells.len()),
                _ => {}
            }
            cells.push((r, c));
        }
        let (start, goal) = match (start.as_slice(), goal.as_slice()) {
            ([s], [g]) => (*s, *g),
            _ => return Err(Error::invalid("layout needs exactly one start and one goal")),
        };
        let env = FourRoomsEnv {
            rows: n_rows,
            cols: n_cols,
            tiles,
            index,
            cells,
            start,
            goal,
            gamma: DEFAULT_GAMMA,
            episode_cap: DEFAULT_EPISODE_CAP,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn from_json(text: &str) -> Result<FourRoomsEnv> {
        let f: LayoutFile = serde_json::from_str(text)?;
        FourRoomsEnv::from_rows(&f.grid)
    }

    pub fn load(path: &Path) -> Result<FourRoomsEnv> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FourRoomsEnv::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&LayoutFile { grid: self.layout_rows() })?)
    }

    pub fn layout_rows(&self) -> Vec<String> {
        self.tiles
            .chunks(self.cols)
            .map(|row| {
                row.iter()
                    .map(|t| match t {
                        Tile::Wall => '#',
                        Tile::Floor => '.',
                        Tile::Start => 'S',
                        Tile::Goal => 'G',
                    })
                    .collect()
            })
            .collect()
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<FourRoomsEnv> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma {gamma} outside [0, 1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_episode_cap(mut self, cap: usize) -> Result<FourRoomsEnv> {
        if cap == 0 {
            return Err(Error::invalid("episode cap must be positive"));
        }
        self.episode_cap = cap;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.cells.len()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn episode_cap(&self) -> usize {
        self.episode_cap
    }

    /// `(row, col)` of a state, counting the outer wall.
    pub fn cell(&self, s: usize) -> (usize, usize) {
        self.cells[s]
    }

    pub fn state_at(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.rows || col >= self.cols {
            return None;
        }
        self.index[row * self.cols + col]
    }

    fn wall(&self, row: usize, col: usize) -> bool {
        self.tiles[row * self.cols + col] == Tile::Wall
    }

    pub fn encode(&self, s: usize) -> StateEncoding {
        StateEncoding::one_hot(self.n_states(), s)
    }

    /// Successor ignoring rewards and termination.
    pub fn move_from(&self, s: usize, a: usize) -> usize {
        let (r, c) = self.cells[s];
        let (nr, nc) = match a {
            UP => (r - 1, c),
            DOWN => (r + 1, c),
            LEFT => (r, c - 1),
            _ => (r, c + 1),
        };
        self.state_at(nr, nc).unwrap_or(s)
    }

    /// One deterministic move. Entering the goal pays 1 and ends the episode;
    /// walls leave the agent in place.
    pub fn step(&self, s: usize, a: usize) -> Result<(usize, f64, bool)> {
        if s >= self.n_states() {
            return Err(Error::invalid(format!("state {s} is not a walkable cell")));
        }
        if a >= N_ACTIONS {
            return Err(Error::invalid(format!("action {a} out of range")));
        }
        if s == self.goal {
            return Ok((s, 0.0, true));
        }
        let next = self.move_from(s, a);
        if next == self.goal {
            Ok((next, 1.0, true))
        } else {
            Ok((next, 0.0, false))
        }
    }

    /// Breadth-first distances from `from`, `None` where unreachable.
    pub fn bfs_distances(&self, from: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_states()];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(s) = queue.pop_front() {
            for a in 0..N_ACTIONS {
                let next = self.move_from(s, a);
                if dist[next].is_none() {
                    dist[next] = Some(dist[s].expect("visited") + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    pub fn bfs_distance(&self, from: usize, to: usize) -> Option<usize> {
        self.bfs_distances(from)[to]
    }

    /// Cells inside a wall line: walls on both sides along one axis and
    /// floor on both sides along the other.
    pub fn gap_cells(&self) -> Vec<usize> {
        (0..self.n_states())
            .filter(|&s| {
                let (r, c) = self.cells[s];
                let horizontal = self.wall(r, c - 1) && self.wall(r, c + 1) && !self.wall(r - 1, c) && !self.wall(r + 1, c);
                let vertical = self.wall(r - 1, c) && self.wall(r + 1, c) && !self.wall(r, c - 1) && !self.wall(r, c + 1);
                horizontal || vertical
            })
            .collect()
    }

    /// Connected components of the floor once gap cells are removed.
    pub fn rooms(&self) -> Vec<Vec<usize>> {
        let gaps = self.gap_cells();
        let mut room_of = vec![usize::MAX; self.n_states()];
        let mut rooms = Vec::new();
        for seed in 0..self.n_states() {
            if gaps.contains(&seed) || room_of[seed] != usize::MAX {
                continue;
            }
            let id = rooms.len();
            let mut members = vec![seed];
            room_of[seed] = id;
            let mut k = 0;
            while k < members.len() {
                let s = members[k];
                for a in 0..N_ACTIONS {
                    let next = self.move_from(s, a);
                    if !gaps.contains(&next) && room_of[next] == usize::MAX {
                        room_of[next] = id;
                        members.push(next);
                    }
                }
                k += 1;
            }
            members.sort_unstable();
            rooms.push(members);
        }
        rooms
    }

    fn validate(&self) -> Result<()> {
        if self.start == self.goal {
            return Err(Error::invalid("start and goal coincide"));
        }
        if self.bfs_distances(self.start).iter().any(Option::is_none) {
            return Err(Error::invalid("some walkable cell is unreachable from the start"));
        }
        Ok(())
    }

    /// Structural checks on the layout: four rooms and four gaps.
    pub fn check_four_rooms(&self) -> Result<()> {
        let (gaps, rooms) = (self.gap_cells().len(), self.rooms().len());
        if gaps != 4 || rooms != 4 {
            return Err(Error::invalid(format!("layout has {rooms} rooms and {gaps} gaps, expected 4 and 4")));
        }
        Ok(())
    }

    /// The goal is absorbing with zero reward; every move into it pays 1.
    pub fn to_mdp(&self) -> Result<Mdp> {
        let (n, na) = (self.n_states(), N_ACTIONS);
        let mut transition = vec![0.0; n * na * n];
        let mut reward = vec![0.0; n * na];
        for s in 0..n {
            for a in 0..na {
                let next = if s == self.goal { s } else { self.move_from(s, a) };
                transition[(s * na + a) * n + next] = 1.0;
                if s != self.goal && next == self.goal {
                    reward[s * na + a] = 1.0;
                }
            }
        }
        let mut initial = vec![0.0; n];
        initial[self.start] = 1.0;
        Mdp::new(n, na, transition, reward, self.gamma, initial)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{bellman_optimality, value_iteration_exact};

    #[test]
    fn canonical_layout_shape() {
        let env = FourRoomsEnv::canonical();
        assert_eq!(env.n_states(), 104);
        assert_eq!(env.cell(env.start()), (11, 11));
        assert_eq!(env.cell(env.goal()), (1, 1));
        env.check_four_rooms().unwrap();
        let gaps: Vec<_> = env.gap_cells().iter().map(|&s| env.cell(s)).collect();
        assert_eq!(gaps, vec![(3, 6), (6, 2), (7, 9), (10, 6)]);
        let sizes: Vec<usize> = env.rooms().iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 100);
    }

    #[test]
    fn fixture_matches_constant() {
        let text = include_str!("../../../../fixtures/fourrooms.json");
        let env = FourRoomsEnv::from_json(text).unwrap();
        assert_eq!(env.layout_rows(), LAYOUT.iter().map(|r| r.to_string()).collect::<Vec<_>>());
        let round = FourRoomsEnv::from_json(&env.to_json().unwrap()).unwrap();
        assert_eq!(round.layout_rows(), env.layout_rows());
    }

    #[test]
    fn step_rules() {
        let env = FourRoomsEnv::canonical();
        let s = env.start();
        assert_eq!(env.step(s, RIGHT).unwrap(), (s, 0.0, false));
        assert_eq!(env.step(s, DOWN).unwrap(), (s, 0.0, false));
        let up = env.step(s, UP).unwrap();
        assert_eq!(env.cell(up.0), (10, 11));
        let beside_goal = env.state_at(1, 2).unwrap();
        assert_eq!(env.step(beside_goal, LEFT).unwrap(), (env.goal(), 1.0, true));
        assert!(env.step(env.n_states(), UP).is_err());
        assert!(env.step(s, 4).is_err());
    }

    #[test]
    fn greedy_shortest_path_matches_bfs() {
        let env = FourRoomsEnv::canonical();
        let d = env.bfs_distance(env.start(), env.goal()).unwrap();
        assert_eq!(d, 20);
        // Follow any neighbour that decreases the distance to the goal.
        let to_goal = env.bfs_distances(env.goal());
        let (mut s, mut len) = (env.start(), 0);
        loop {
            let a = (0..N_ACTIONS).find(|&a| to_goal[env.move_from(s, a)] < to_goal[s]).unwrap();
            let (next, r, done) = env.step(s, a).unwrap();
            len += 1;
            s = next;
            if done {
                assert_eq!(r, 1.0);
                break;
            }
        }
        assert_eq!(len, d);
    }

    #[test]
    fn optimal_values() {
        let env = FourRoomsEnv::canonical();
        let mdp = env.to_mdp().unwrap();
        let (q, _) = value_iteration_exact(&mdp, 1e-12).unwrap();
        assert!(bellman_optimality(&mdp, &q).max_abs_diff(&q) < 1e-10);
        let v_start = q.row(env.start()).iter().copied().fold(f64::MIN, f64::max);
        assert!((v_start - 0.99f64.powi(19)).abs() < 1e-10);
        assert!(q.values().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn malformed_layouts_rejected() {
        assert!(FourRoomsEnv::from_rows(&["###", "#S#", "###"]).is_err());
        assert!(FourRoomsEnv::from_rows(&["####", "#SG#", "###"]).is_err());
        assert!(FourRoomsEnv::from_rows(&["#####", "#S#G#", "#####"]).is_err());
        assert!(FourRoomsEnv::from_rows(&["####", "#SX#", "####"]).is_err());
        let open = FourRoomsEnv::from_rows(&["#####", "#S.G#", "#####"]).unwrap();
        assert!(open.check_four_rooms().is_err());
    }
}
