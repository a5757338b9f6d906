//! Maze navigation with a trained archive: A* over an inflated occupancy grid
//! and greedy selection of the behaviour whose predicted arrival best tracks
//! the plan.

use crate::archive::{Solution, UnstructuredArchive};
use crate::arena::{Environment, Pose};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::path::Path;

pub const SUCCESS_RADIUS: f64 = 0.05;
pub const MAX_ACTIONS: usize = 100;
pub const LOOKAHEAD: f64 = 0.3;
pub const ACTION_SECONDS: f64 = 5.0;

/// Axis-aligned obstacle in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    fn distance_to(&self, p: [f64; 2]) -> f64 {
        let dx = (self.x_min - p[0]).max(p[0] - self.x_max).max(0.0);
        let dy = (self.y_min - p[1]).max(p[1] - self.y_max).max(0.0);
        dx.hypot(dy)
    }
}

/// On-disk maze description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MazeSpec {
    /// Width and height; the maze spans `[0, w] × [0, h]`.
    pub bounds: [f64; 2],
    pub resolution: f64,
    pub obstacles: Vec<Rect>,
    pub start: Pose,
    pub goal: [f64; 2],
    pub inflation: f64,
}

impl MazeSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub type Cell = (usize, usize);

/// Occupancy grid with cost-1 straight and cost-√2 diagonal moves.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    blocked: Vec<bool>,
}

impl Grid {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self { nx, ny, blocked: vec![false; nx * ny] }
    }

    pub fn from_blocked(nx: usize, ny: usize, blocked: Vec<bool>) -> Self {
        assert_eq!(blocked.len(), nx * ny);
        Self { nx, ny, blocked }
    }

    pub fn index(&self, c: Cell) -> usize {
        c.1 * self.nx + c.0
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked[self.index(c)]
    }

    pub fn set_blocked(&mut self, c: Cell, b: bool) {
        let i = self.index(c);
        self.blocked[i] = b;
    }

    /// Free 8-neighbours with step cost; diagonals may not cut a blocked corner.
    pub fn neighbours(&self, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
        const MOVES: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        MOVES.iter().filter_map(move |&(dx, dy)| {
            let x = c.0 as isize + dx;
            let y = c.1 as isize + dy;
            if x < 0 || y < 0 || x >= self.nx as isize || y >= self.ny as isize {
                return None;
            }
            let n = (x as usize, y as usize);
            if self.is_blocked(n) {
                return None;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && (self.is_blocked((x as usize, c.1)) || self.is_blocked((c.0, y as usize))) {
                return None;
            }
            Some((n, diagonal))
        })
    }
}

/// Path cost as (straight moves, diagonal moves); equal counts give
/// bit-identical costs regardless of summation order.
pub fn move_cost(straight: u32, diagonal: u32) -> f64 {
    straight as f64 + diagonal as f64 * SQRT_2
}

pub fn path_cost(path: &[Cell]) -> f64 {
    let (mut s, mut d) = (0, 0);
    for w in path.windows(2) {
        if w[0].0 != w[1].0 && w[0].1 != w[1].1 {
            d += 1;
        } else {
            s += 1;
        }
    }
    move_cost(s, d)
}

#[derive(PartialEq)]
struct Key(f64, f64, usize);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.total_cmp(&other.1)).then(self.2.cmp(&other.2))
    }
}

fn euclid(a: Cell, b: Cell) -> f64 {
    (a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64)
}

/// Shortest 8-connected path from `start` to `goal`, both included.
/// Expansion order is `(f, h, row-major index)`.
pub fn astar(grid: &Grid, start: Cell, goal: Cell) -> Result<Vec<Cell>> {
    if start.0 >= grid.nx || start.1 >= grid.ny || goal.0 >= grid.nx || goal.1 >= grid.ny {
        return Err(Error::Config(format!("cell outside a {}x{} grid", grid.nx, grid.ny)));
    }
    if grid.is_blocked(start) || grid.is_blocked(goal) {
        return Err(Error::NoPath);
    }
    let n = grid.nx * grid.ny;
    let mut counts: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let si = grid.index(start);
    counts[si] = Some((0, 0));
    let h0 = euclid(start, goal);
    open.push(Reverse((Key(h0, h0, si), start)));
    while let Some(Reverse((_, c))) = open.pop() {
        let ci = grid.index(c);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if c == goal {
            let mut path = vec![c];
            let mut i = ci;
            while parent[i] != usize::MAX {
                i = parent[i];
                path.push((i % grid.nx, i / grid.nx));
            }
            path.reverse();
            return Ok(path);
        }
        let (s, d) = counts[ci].expect("closed cells have a cost");
        for (nb, diagonal) in grid.neighbours(c) {
            let ni = grid.index(nb);
            if closed[ni] {
                continue;
            }
            let cand = if diagonal { (s, d + 1) } else { (s + 1, d) };
            let g = move_cost(cand.0, cand.1);
            if counts[ni].is_none_or(|old| g < move_cost(old.0, old.1)) {
                counts[ni] = Some(cand);
                parent[ni] = ci;
                let h = euclid(nb, goal);
                open.push(Reverse((Key(g + h, h, ni), nb)));
            }
        }
    }
    Err(Error::NoPath)
}

/// Maze rasterised onto a grid whose cells are blocked when their centre lies
/// within `inflation` of an obstacle.
#[derive(Clone, Debug)]
pub struct MazeMap {
    pub spec: MazeSpec,
    pub grid: Grid,
}

impl MazeMap {
    pub fn new(mut spec: MazeSpec) -> Result<Self> {
        if !(spec.resolution > 0.0) || !(spec.bounds[0] > 0.0) || !(spec.bounds[1] > 0.0) {
            return Err(Error::Config("maze bounds and resolution must be positive".into()));
        }
        if !(spec.inflation >= 0.0) {
            return Err(Error::Config("maze inflation must be non-negative".into()));
        }
        spec.start = Pose::new(spec.start.x, spec.start.y, spec.start.theta);
        let nx = (spec.bounds[0] / spec.resolution).round() as usize;
        let ny = (spec.bounds[1] / spec.resolution).round() as usize;
        let mut grid = Grid::new(nx, ny);
        for y in 0..ny {
            for x in 0..nx {
                let c = [(x as f64 + 0.5) * spec.resolution, (y as f64 + 0.5) * spec.resolution];
                let hit = spec.obstacles.iter().any(|r| r.distance_to(c) <= spec.inflation);
                grid.set_blocked((x, y), hit);
            }
        }
        let map = Self { spec, grid };
        for (what, p) in [("start", map.spec.start.position()), ("goal", map.spec.goal)] {
            match map.cell_of(p) {
                Some(c) if !map.grid.is_blocked(c) => {}
                _ => return Err(Error::Config(format!("maze {what} is not in free space"))),
            }
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(MazeSpec::load(path)?)
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<Cell> {
        let r = self.spec.resolution;
        if p[0] < 0.0 || p[1] < 0.0 {
            return None;
        }
        let (x, y) = ((p[0] / r).floor() as usize, (p[1] / r).floor() as usize);
        (x < self.grid.nx && y < self.grid.ny).then_some((x, y))
    }

    pub fn cell_center(&self, c: Cell) -> [f64; 2] {
        let r = self.spec.resolution;
        [(c.0 as f64 + 0.5) * r, (c.1 as f64 + 0.5) * r]
    }

    /// The free cell whose centre is closest to `p` (ties by row-major index).
    pub fn nearest_free_cell(&self, p: [f64; 2]) -> Option<Cell> {
        if let Some(c) = self.cell_of(p) {
            if !self.grid.is_blocked(c) {
                return Some(c);
            }
        }
        let mut best: Option<(f64, Cell)> = None;
        for y in 0..self.grid.ny {
            for x in 0..self.grid.nx {
                if self.grid.is_blocked((x, y)) {
                    continue;
                }
                let c = self.cell_center((x, y));
                let d = (c[0] - p[0]).hypot(c[1] - p[1]);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, (x, y)));
                }
            }
        }
        best.map(|(_, c)| c)
    }

    /// Whether the segment `a → b` touches a blocked cell or leaves the maze.
    pub fn segment_blocked(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let r = self.spec.resolution;
        let (Some(mut c), Some(end)) = (self.cell_of(a), self.cell_of(b)) else {
            return true;
        };
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let step_x: isize = if dx > 0.0 { 1 } else { -1 };
        let step_y: isize = if dy > 0.0 { 1 } else { -1 };
        let boundary = |i: usize, step: isize| (i as f64 + if step > 0 { 1.0 } else { 0.0 }) * r;
        let mut t_max_x = if dx != 0.0 { (boundary(c.0, step_x) - a[0]) / dx } else { f64::INFINITY };
        let mut t_max_y = if dy != 0.0 { (boundary(c.1, step_y) - a[1]) / dy } else { f64::INFINITY };
        let t_dx = if dx != 0.0 { r / dx.abs() } else { f64::INFINITY };
        let t_dy = if dy != 0.0 { r / dy.abs() } else { f64::INFINITY };
        let max_steps = c.0.abs_diff(end.0) + c.1.abs_diff(end.1) + 2;
        let mut steps = 0;
        loop {
            if self.grid.is_blocked(c) {
                return true;
            }
            if c == end {
                return false;
            }
            let (nx, ny) = if t_max_x < t_max_y {
                t_max_x += t_dx;
                (c.0 as isize + step_x, c.1 as isize)
            } else if t_max_y < t_max_x {
                t_max_y += t_dy;
                (c.0 as isize, c.1 as isize + step_y)
            } else {
                // Exactly through a corner: both side cells are touched.
                let side_a = (c.0 as isize + step_x, c.1 as isize);
                let side_b = (c.0 as isize, c.1 as isize + step_y);
                for s in [side_a, side_b] {
                    if !self.in_grid(s) || self.grid.is_blocked((s.0 as usize, s.1 as usize)) {
                        return true;
                    }
                }
                t_max_x += t_dx;
                t_max_y += t_dy;
                (c.0 as isize + step_x, c.1 as isize + step_y)
            };
            steps += 1;
            if !self.in_grid((nx, ny)) || steps > max_steps {
                return true;
            }
            c = (nx as usize, ny as usize);
        }
    }

    fn in_grid(&self, c: (isize, isize)) -> bool {
        c.0 >= 0 && c.1 >= 0 && (c.0 as usize) < self.grid.nx && (c.1 as usize) < self.grid.ny
    }

    /// World-frame plan from `p` to the goal: free-cell centres, the last one
    /// replaced by the exact goal.
    pub fn plan(&self, p: [f64; 2]) -> Result<Vec<[f64; 2]>> {
        let start = self.nearest_free_cell(p).ok_or(Error::NoPath)?;
        let goal = self.cell_of(self.spec.goal).ok_or(Error::NoPath)?;
        let cells = astar(&self.grid, start, goal)?;
        let mut pts: Vec<[f64; 2]> = cells.iter().map(|&c| self.cell_center(c)).collect();
        *pts.last_mut().expect("a path holds at least the goal") = self.spec.goal;
        Ok(pts)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Point `LOOKAHEAD` metres of arc length past the path point closest to `p`,
/// or the final point when the remaining path is shorter.
pub fn waypoint(path: &[[f64; 2]], p: [f64; 2]) -> [f64; 2] {
    let closest = path
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, q)| {
            let d = dist(*q, p);
            if d < best.1 {
                (i, d)
            } else {
                best
            }
        })
        .0;
    let mut travelled = 0.0;
    for i in closest + 1..path.len() {
        travelled += dist(path[i - 1], path[i]);
        if travelled >= LOOKAHEAD {
            return path[i];
        }
    }
    *path.last().expect("non-empty path")
}

/// Archive member whose predicted arrival from `pose` is nearest to the
/// waypoint without crossing an obstacle. Returns the member and whether the
/// collision filter had to be ignored.
pub fn select_action<'a>(
    archive: &'a UnstructuredArchive,
    pose: &Pose,
    path: &[[f64; 2]],
    maze: &MazeMap,
) -> Result<(&'a Solution, bool)> {
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    if path.is_empty() {
        return Err(Error::NoPath);
    }
    let target = waypoint(path, pose.position());
    let mut free: Option<(f64, &Solution)> = None;
    let mut any: Option<(f64, &Solution)> = None;
    for s in archive.solutions() {
        let arrival = pose.transform_point(s.bd);
        let d = dist(arrival, target);
        if any.is_none_or(|(b, _)| d < b) {
            any = Some((d, s));
        }
        if free.is_none_or(|(b, _)| d < b) && !maze.segment_blocked(pose.position(), arrival) {
            free = Some((d, s));
        }
    }
    match free {
        Some((_, s)) => Ok((s, false)),
        None => {
            log::debug!("every action collides; taking the closest arrival anyway");
            Ok((any.expect("archive is non-empty").1, true))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub success: bool,
    pub n_actions: usize,
    /// Simulated seconds, `ACTION_SECONDS` per action.
    pub elapsed: f64,
    pub final_distance: f64,
    pub escape_hatches: usize,
    pub no_path: bool,
    pub poses: Vec<Pose>,
}

/// Drives the robot from the maze start towards the goal, replanning before
/// every action.
pub fn run_trial<E: Environment>(
    archive: &UnstructuredArchive,
    maze: &MazeMap,
    env: &mut E,
    max_actions: usize,
) -> Result<TrialReport> {
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    let goal = maze.spec.goal;
    let mut pose = maze.spec.start;
    let mut poses = vec![pose];
    let mut escape_hatches = 0;
    let mut no_path = false;
    let mut n_actions = 0;
    while pose.distance_to(goal) > SUCCESS_RADIUS && n_actions < max_actions {
        let path = match maze.plan(pose.position()) {
            Ok(p) => p,
            Err(Error::NoPath) => {
                no_path = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let (s, escaped) = select_action(archive, &pose, &path, maze)?;
        escape_hatches += escaped as usize;
        pose = env.execute(pose, &s.genotype).final_pose;
        poses.push(pose);
        n_actions += 1;
    }
    let final_distance = pose.distance_to(goal);
    Ok(TrialReport {
        success: final_distance <= SUCCESS_RADIUS,
        n_actions,
        elapsed: n_actions as f64 * ACTION_SECONDS,
        final_distance,
        escape_hatches,
        no_path,
        poses,
    })
}

#[cfg(test)]
#[path = "navigation_tests.rs"]
mod tests;
