use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest side length covered by the standard set; anything bigger is extrapolation.
pub const STANDARD_MAX_SIDE: usize = 10;

const GENERATION_ATTEMPTS: usize = 1000;

/// A 1-based `(row, col)` grid coordinate. Serializes as `[r, c]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    /// True when the two cells differ by one orthogonal step.
    pub fn is_adjacent(self, other: Cell) -> bool {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col) == 1
    }
}

impl From<[usize; 2]> for Cell {
    fn from([row, col]: [usize; 2]) -> Self {
        Cell { row, col }
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// A rectangular planning map with walls, a start and a goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    id: String,
    rows: usize,
    cols: usize,
    walls: Vec<Cell>,
    wall_mask: Vec<bool>,
    start: Cell,
    goal: Cell,
}

impl Grid {
    pub fn new(id: impl Into<String>, rows: usize, cols: usize, walls: impl IntoIterator<Item = Cell>, start: Cell, goal: Cell) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract("grid dimensions must be positive"));
        }
        let in_bounds = |c: Cell| (1..=rows).contains(&c.row) && (1..=cols).contains(&c.col);
        let mut walls: Vec<Cell> = walls.into_iter().collect();
        walls.sort();
        walls.dedup();
        if let Some(w) = walls.iter().find(|w| !in_bounds(**w)) {
            return Err(Error::contract(format!("wall {w} outside {rows}x{cols} grid")));
        }
        if !in_bounds(start) || !in_bounds(goal) {
            return Err(Error::contract("start and goal must lie inside the grid"));
        }
        if start == goal {
            return Err(Error::contract("start and goal must differ"));
        }
        let mut wall_mask = vec![false; rows * cols];
        for w in &walls {
            wall_mask[(w.row - 1) * cols + (w.col - 1)] = true;
        }
        if wall_mask[(start.row - 1) * cols + start.col - 1] || wall_mask[(goal.row - 1) * cols + goal.col - 1] {
            return Err(Error::contract("start and goal must not be walls"));
        }
        Ok(Grid {
            id: id.into(),
            rows,
            cols,
            walls,
            wall_mask,
            start,
            goal,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Walls in ascending `(row, col)` order.
    pub fn walls(&self) -> &[Cell] {
        &self.walls
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    /// Either side exceeds the standard 10x10 envelope.
    pub fn is_extrapolation(&self) -> bool {
        self.rows > STANDARD_MAX_SIDE || self.cols > STANDARD_MAX_SIDE
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        (1..=self.rows).contains(&c.row) && (1..=self.cols).contains(&c.col)
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.wall_mask[self.index(c)]
    }

    /// Row-major dense index of an in-bounds cell.
    pub fn index(&self, c: Cell) -> usize {
        (c.row - 1) * self.cols + (c.col - 1)
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.cols + 1, index % self.cols + 1)
    }

    /// In-bounds orthogonal neighbours in the fixed order Up, Down, Left, Right.
    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        let up = (c.row > 1).then(|| Cell::new(c.row - 1, c.col));
        let down = (c.row < self.rows).then(|| Cell::new(c.row + 1, c.col));
        let left = (c.col > 1).then(|| Cell::new(c.row, c.col - 1));
        let right = (c.col < self.cols).then(|| Cell::new(c.row, c.col + 1));
        [up, down, left, right].into_iter().flatten()
    }

    /// Non-wall neighbours in the fixed order.
    pub fn open_neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        self.neighbors(c).filter(move |n| !self.is_wall(*n))
    }

    /// Cell touches at least one wall orthogonally. The boundary does not count.
    pub fn is_wall_adjacent(&self, c: Cell) -> bool {
        self.neighbors(c).any(|n| self.is_wall(n))
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.cell_count()];
        let mut queue = VecDeque::from([self.start]);
        seen[self.index(self.start)] = true;
        while let Some(c) = queue.pop_front() {
            if c == self.goal {
                return true;
            }
            for n in self.open_neighbors(c) {
                let i = self.index(n);
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(n);
                }
            }
        }
        false
    }

    pub(crate) fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// Random connected grid with `floor(density * rows * cols)` walls.
pub fn generate_grid(rows: usize, cols: usize, wall_density: f64, seed: u64) -> Result<Grid> {
    if rows < 2 || cols < 2 {
        return Err(Error::contract(format!("grid must be at least 2x2, got {rows}x{cols}")));
    }
    if !(0.0..=0.4).contains(&wall_density) {
        return Err(Error::contract(format!("wall density {wall_density} outside [0, 0.4]")));
    }
    let cells = rows * cols;
    let n_walls = ((wall_density * cells as f64).floor() as usize).min(cells - 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..cells).collect();
    for _ in 0..GENERATION_ATTEMPTS {
        order.shuffle(&mut rng);
        let (walls, open) = order.split_at(n_walls);
        let si = rng.gen_range(0..open.len());
        let mut gi = rng.gen_range(0..open.len() - 1);
        if gi >= si {
            gi += 1;
        }
        let to_cell = |i: usize| Cell::new(i / cols + 1, i % cols + 1);
        let grid = Grid::new(
            format!("g{rows}x{cols}-{seed:016x}"),
            rows,
            cols,
            walls.iter().map(|&i| to_cell(i)),
            to_cell(open[si]),
            to_cell(open[gi]),
        )?;
        if grid.is_connected() {
            return Ok(grid);
        }
    }
    Err(Error::GenerationFailed {
        attempts: GENERATION_ATTEMPTS,
        rows,
        cols,
        density: wall_density,
    })
}

/// ASCII prompt: header `GRID rows cols`, then one line per row using `.`, `X`, `S`, `G`.
pub fn render_prompt(grid: &Grid) -> String {
    let mut out = format!("GRID {} {}", grid.rows, grid.cols);
    for r in 1..=grid.rows {
        out.push('\n');
        for c in 1..=grid.cols {
            let cell = Cell::new(r, c);
            out.push(if cell == grid.start {
                'S'
            } else if cell == grid.goal {
                'G'
            } else if grid.is_wall(cell) {
                'X'
            } else {
                '.'
            });
        }
    }
    out
}

/// Inverse of [`render_prompt`].
pub fn parse_prompt(text: &str, id: impl Into<String>) -> Result<Grid> {
    let mut lines = text.trim_end_matches('\n').split('\n');
    let header = lines.next().unwrap_or_default();
    let fields: Vec<&str> = header.split_whitespace().collect();
    let perr = |offset: usize, message: String| Error::Parse { offset, message };
    let (rows, cols) = match fields.as_slice() {
        ["GRID", r, c] => (
            r.parse::<usize>().map_err(|e| perr(0, format!("bad row count: {e}")))?,
            c.parse::<usize>().map_err(|e| perr(0, format!("bad column count: {e}")))?,
        ),
        _ => return Err(perr(0, "expected header `GRID rows cols`".into())),
    };
    let mut walls = Vec::new();
    let (mut start, mut goal) = (None, None);
    let mut offset = header.len() + 1;
    let mut seen_rows = 0;
    for (ri, line) in lines.enumerate() {
        if ri >= rows {
            return Err(perr(offset, "more grid lines than the header declares".into()));
        }
        if line.chars().count() != cols {
            return Err(perr(offset, format!("row {} has {} cells, expected {cols}", ri + 1, line.len())));
        }
        for (ci, ch) in line.chars().enumerate() {
            let cell = Cell::new(ri + 1, ci + 1);
            match ch {
                '.' => {}
                'X' => walls.push(cell),
                'S' if start.is_none() => start = Some(cell),
                'G' if goal.is_none() => goal = Some(cell),
                other => return Err(perr(offset + ci, format!("unexpected grid character {other:?}"))),
            }
        }
        offset += line.len() + 1;
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(perr(offset, format!("expected {rows} grid lines, found {seen_rows}")));
    }
    let start = start.ok_or_else(|| perr(offset, "grid has no start".into()))?;
    let goal = goal.ok_or_else(|| perr(offset, "grid has no goal".into()))?;
    Grid::new(id, rows, cols, walls, start, goal)
}
