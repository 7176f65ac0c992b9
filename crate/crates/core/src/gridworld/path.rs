use std::fmt;

use serde::{Deserialize, Serialize};

use super::grid::{Cell, Grid};
use crate::{Error, Result};

/// An ordered, non-empty sequence of cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Cell>", into = "Vec<Cell>")]
pub struct Path(Vec<Cell>);

impl Path {
    pub fn new(cells: Vec<Cell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::contract("a path needs at least one cell"));
        }
        Ok(Path(cells))
    }

    pub fn cells(&self) -> &[Cell] {
        &self.0
    }

    /// Number of cells, which is the path-length attribute.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> Cell {
        self.0[0]
    }

    pub fn last(&self) -> Cell {
        self.0[self.0.len() - 1]
    }

    /// No cell occurs twice.
    pub fn is_simple(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.0.len());
        self.0.iter().all(|c| seen.insert(*c))
    }
}

impl TryFrom<Vec<Cell>> for Path {
    type Error = Error;

    fn try_from(cells: Vec<Cell>) -> Result<Self> {
        Path::new(cells)
    }
}

impl From<Path> for Vec<Cell> {
    fn from(p: Path) -> Self {
        p.0
    }
}

/// Renders as `(r,c) -> (r,c) -> ...`.
impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Why a path fails the validity rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    OffGrid,
    WallHit,
    NonAdjacentStep,
    WrongEndpoints,
}

impl Violation {
    pub fn as_str(self) -> &'static str {
        match self {
            Violation::OffGrid => "off-grid",
            Violation::WallHit => "wall-hit",
            Violation::NonAdjacentStep => "non-adjacent-step",
            Violation::WrongEndpoints => "wrong-endpoints",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Checks cells in order (bounds, walls, step adjacency) and the endpoints last.
/// Revisiting a cell is allowed.
pub fn validate_path(grid: &Grid, path: &Path) -> std::result::Result<(), Violation> {
    let mut prev: Option<Cell> = None;
    for &c in path.cells() {
        if !grid.in_bounds(c) {
            return Err(Violation::OffGrid);
        }
        if grid.is_wall(c) {
            return Err(Violation::WallHit);
        }
        if let Some(p) = prev {
            if !p.is_adjacent(c) {
                return Err(Violation::NonAdjacentStep);
            }
        }
        prev = Some(c);
    }
    if path.first() != grid.start() || path.last() != grid.goal() {
        return Err(Violation::WrongEndpoints);
    }
    Ok(())
}

pub fn is_valid_path(grid: &Grid, path: &Path) -> bool {
    validate_path(grid, path).is_ok()
}

/// Number of path cells (counted per occurrence) with at least one orthogonal wall neighbour.
pub fn wall_adjacency_score(grid: &Grid, path: &Path) -> Result<usize> {
    if let Err(v) = validate_path(grid, path) {
        return Err(Error::contract(format!("wall adjacency of an invalid path ({v})")));
    }
    Ok(path.cells().iter().filter(|c| grid.is_wall_adjacent(**c)).count())
}

/// Parses `(r,c) -> (r,c) ...`. Whitespace is only accepted around tokens.
pub fn parse_path(text: &str) -> Result<Path> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    let mut cells = Vec::new();
    let err = |offset: usize, message: &str| Error::Parse {
        offset,
        message: message.to_string(),
    };
    let skip_ws = |pos: &mut usize| {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
    };
    let number = |pos: &mut usize| -> Result<usize> {
        let begin = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if begin == *pos {
            return Err(err(begin, "expected a number"));
        }
        text[begin..*pos].parse().map_err(|_| err(begin, "number out of range"))
    };
    let expect = |pos: &mut usize, b: u8, what: &str| -> Result<()> {
        if bytes.get(*pos) == Some(&b) {
            *pos += 1;
            Ok(())
        } else {
            Err(err(*pos, what))
        }
    };
    skip_ws(&mut pos);
    if pos == bytes.len() {
        return Err(err(pos, "empty path"));
    }
    loop {
        expect(&mut pos, b'(', "expected `(`")?;
        let r = number(&mut pos)?;
        expect(&mut pos, b',', "expected `,`")?;
        let c = number(&mut pos)?;
        expect(&mut pos, b')', "expected `)`")?;
        cells.push(Cell::new(r, c));
        skip_ws(&mut pos);
        if pos == bytes.len() {
            break;
        }
        if !text[pos..].starts_with("->") {
            return Err(err(pos, "expected `->`"));
        }
        pos += 2;
        skip_ws(&mut pos);
    }
    Path::new(cells)
}
