//! Gold-path oracles: BFS for length, lexicographic Dijkstra for wall adjacency,
//! beam search for the longest simple path, and an exhaustive search for small grids.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet, VecDeque};

use super::grid::{Cell, Grid};
use super::path::Path;
use crate::{Error, Result};

pub const DEFAULT_BEAM_WIDTH: usize = 512;

/// Exhaustive longest-path search is limited to grids with at most this many cells.
pub const BRUTE_FORCE_MAX_CELLS: usize = 16;

fn rebuild(grid: &Grid, parent: &[usize], goal: usize) -> Path {
    let mut cells = vec![grid.cell_at(goal)];
    let mut cur = goal;
    while parent[cur] != usize::MAX {
        cur = parent[cur];
        cells.push(grid.cell_at(cur));
    }
    cells.reverse();
    Path::new(cells).expect("non-empty")
}

/// Minimum-cell-count path by breadth-first search.
pub fn shortest_path(grid: &Grid) -> Result<Path> {
    let n = grid.cell_count();
    let mut parent = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let start = grid.index(grid.start());
    let goal = grid.index(grid.goal());
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        if i == goal {
            return Ok(rebuild(grid, &parent, goal));
        }
        for nb in grid.open_neighbors(grid.cell_at(i)) {
            let j = grid.index(nb);
            if !seen[j] {
                seen[j] = true;
                parent[j] = i;
                queue.push_back(j);
            }
        }
    }
    Err(Error::NoPath)
}

/// Path minimising `(wall adjacency, length)` lexicographically.
///
/// Entering a wall-adjacent cell costs one adjacency unit; the start cell's own
/// adjacency is charged at initialisation.
pub fn safest_path(grid: &Grid) -> Result<Path> {
    let n = grid.cell_count();
    let adj: Vec<usize> = (0..n).map(|i| grid.is_wall_adjacent(grid.cell_at(i)) as usize).collect();
    let start = grid.index(grid.start());
    let goal = grid.index(grid.goal());
    let mut best = vec![(usize::MAX, usize::MAX); n];
    let mut parent = vec![usize::MAX; n];
    let mut done = vec![false; n];
    best[start] = (adj[start], 1);
    // (cost, insertion order, cell); insertion order makes ties deterministic
    let mut heap = BinaryHeap::from([Reverse((best[start], 0usize, start))]);
    let mut counter = 1usize;
    while let Some(Reverse((cost, _, i))) = heap.pop() {
        if done[i] || cost != best[i] {
            continue;
        }
        done[i] = true;
        if i == goal {
            return Ok(rebuild(grid, &parent, goal));
        }
        for nb in grid.open_neighbors(grid.cell_at(i)) {
            let j = grid.index(nb);
            let cand = (cost.0 + adj[j], cost.1 + 1);
            if !done[j] && cand < best[j] {
                best[j] = cand;
                parent[j] = i;
                heap.push(Reverse((cand, counter, j)));
                counter += 1;
            }
        }
    }
    Err(Error::NoPath)
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Visited(Vec<u64>);

impl Visited {
    fn new(n: usize) -> Self {
        Visited(vec![0; n.div_ceil(64)])
    }

    fn contains(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
}

struct BeamState {
    cell: usize,
    visited: Visited,
    path: Vec<usize>,
}

/// Unvisited open cells reachable from `from` (excluding it), and whether the goal is among them.
fn reachable_unvisited(grid: &Grid, from: usize, visited: &Visited, goal: usize) -> (usize, bool) {
    let mut seen = visited.clone();
    seen.insert(from);
    let mut stack = vec![from];
    let mut count = 0;
    let mut goal_seen = false;
    while let Some(i) = stack.pop() {
        for nb in grid.open_neighbors(grid.cell_at(i)) {
            let j = grid.index(nb);
            if !seen.contains(j) {
                seen.insert(j);
                count += 1;
                goal_seen |= j == goal;
                stack.push(j);
            }
        }
    }
    (count, goal_seen)
}

/// Approximate longest simple path by beam search.
///
/// Candidates are ranked by `cells so far + unvisited cells still reachable`;
/// duplicate `(cell, visited set)` states are merged and dead ends that can no
/// longer reach the goal are pruned.
pub fn longest_simple_path(grid: &Grid, beam_width: usize) -> Result<Path> {
    if beam_width == 0 {
        return Err(Error::contract("beam width must be at least 1"));
    }
    let n = grid.cell_count();
    let start = grid.index(grid.start());
    let goal = grid.index(grid.goal());
    let mut visited = Visited::new(n);
    visited.insert(start);
    let mut beam = vec![BeamState {
        cell: start,
        visited,
        path: vec![start],
    }];
    let mut best: Option<Vec<usize>> = None;
    while !beam.is_empty() {
        let mut scored: Vec<(usize, BeamState)> = Vec::new();
        let mut seen: HashSet<(usize, Visited)> = HashSet::new();
        for state in &beam {
            for nb in grid.open_neighbors(grid.cell_at(state.cell)) {
                let j = grid.index(nb);
                if state.visited.contains(j) {
                    continue;
                }
                if j == goal {
                    if best.as_ref().is_none_or(|b| state.path.len() + 1 > b.len()) {
                        let mut p = state.path.clone();
                        p.push(j);
                        best = Some(p);
                    }
                    continue;
                }
                let (reach, goal_reachable) = reachable_unvisited(grid, j, &state.visited, goal);
                if !goal_reachable {
                    continue;
                }
                let mut visited = state.visited.clone();
                visited.insert(j);
                if !seen.insert((j, visited.clone())) {
                    continue;
                }
                let mut path = state.path.clone();
                path.push(j);
                scored.push((path.len() + reach, BeamState { cell: j, visited, path }));
            }
        }
        // stable sort keeps expansion order among equal scores
        scored.sort_by_key(|s| Reverse(s.0));
        scored.truncate(beam_width);
        beam = scored.into_iter().map(|(_, s)| s).collect();
    }
    best.map(|p| Path::new(p.into_iter().map(|i| grid.cell_at(i)).collect()).expect("non-empty"))
        .ok_or(Error::NoPath)
}

/// Exact longest simple path by exhaustive depth-first enumeration.
pub fn brute_force_longest(grid: &Grid) -> Result<Path> {
    if grid.cell_count() > BRUTE_FORCE_MAX_CELLS {
        return Err(Error::Budget(format!(
            "exhaustive search limited to {BRUTE_FORCE_MAX_CELLS} cells, grid has {}",
            grid.cell_count()
        )));
    }
    fn dfs(grid: &Grid, cell: Cell, visited: u64, path: &mut Vec<Cell>, best: &mut Vec<Cell>) {
        if cell == grid.goal() {
            if path.len() > best.len() {
                best.clone_from(path);
            }
            return;
        }
        for nb in grid.open_neighbors(cell) {
            let bit = 1u64 << grid.index(nb);
            if visited & bit == 0 {
                path.push(nb);
                dfs(grid, nb, visited | bit, path, best);
                path.pop();
            }
        }
    }
    let mut best = Vec::new();
    let mut path = vec![grid.start()];
    dfs(grid, grid.start(), 1u64 << grid.index(grid.start()), &mut path, &mut best);
    if best.is_empty() {
        return Err(Error::NoPath);
    }
    Path::new(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{is_valid_path, wall_adjacency_score};

    fn grid(rows: usize, cols: usize, walls: &[(usize, usize)], s: (usize, usize), g: (usize, usize)) -> Grid {
        Grid::new(
            "t",
            rows,
            cols,
            walls.iter().map(|&(r, c)| Cell::new(r, c)),
            Cell::new(s.0, s.1),
            Cell::new(g.0, g.1),
        )
        .unwrap()
    }

    #[test]
    fn bfs_lengths() {
        assert_eq!(shortest_path(&grid(3, 3, &[], (1, 1), (3, 3))).unwrap().len(), 5);
        assert_eq!(shortest_path(&grid(2, 2, &[], (1, 1), (2, 2))).unwrap().len(), 3);
        let walled = grid(3, 3, &[(2, 3), (3, 2)], (1, 1), (3, 3));
        assert!(matches!(shortest_path(&walled), Err(Error::NoPath)));
        assert!(matches!(safest_path(&walled), Err(Error::NoPath)));
        assert!(matches!(longest_simple_path(&walled, 8), Err(Error::NoPath)));
    }

    #[test]
    fn bfs_tie_break_prefers_up_down_first() {
        // From (1,1) the first expanded neighbour is Down, so the path goes down the first column.
        let p = shortest_path(&grid(2, 2, &[], (1, 1), (2, 2))).unwrap();
        assert_eq!(p.cells()[1], Cell::new(2, 1));
    }

    #[test]
    fn safest_on_empty_grid_is_shortest() {
        let g = grid(4, 5, &[], (1, 1), (4, 5));
        let p = safest_path(&g).unwrap();
        assert_eq!(p.len(), shortest_path(&g).unwrap().len());
        assert_eq!(wall_adjacency_score(&g, &p).unwrap(), 0);
    }

    #[test]
    fn safest_center_wall() {
        // every route around the centre wall touches it at least twice
        let g = grid(3, 3, &[(2, 2)], (1, 1), (3, 3));
        let p = safest_path(&g).unwrap();
        assert!(is_valid_path(&g, &p));
        assert_eq!(wall_adjacency_score(&g, &p).unwrap(), 2);
    }

    #[test]
    fn safest_through_corridor() {
        let g = grid(3, 4, &[(1, 2), (3, 2), (1, 3), (3, 3)], (2, 1), (2, 4));
        let p = safest_path(&g).unwrap();
        assert!(wall_adjacency_score(&g, &p).unwrap() >= 1);
    }

    #[test]
    fn safest_detours_around_walls() {
        // the direct row passes the wall; a detour through row 3 is clean but longer
        let g = grid(3, 5, &[(1, 3)], (1, 1), (1, 5));
        let p = safest_path(&g).unwrap();
        assert!(is_valid_path(&g, &p));
        let shortest = shortest_path(&g).unwrap();
        assert!(wall_adjacency_score(&g, &p).unwrap() < wall_adjacency_score(&g, &shortest).unwrap());
    }

    #[test]
    fn longest_small_cases() {
        assert_eq!(longest_simple_path(&grid(3, 3, &[], (1, 1), (3, 3)), 512).unwrap().len(), 9);
        assert_eq!(longest_simple_path(&grid(2, 2, &[], (1, 1), (1, 2)), 512).unwrap().len(), 4);
        let p = longest_simple_path(&grid(4, 4, &[(2, 2)], (1, 1), (4, 4)), 512).unwrap();
        assert!(is_valid_path(&grid(4, 4, &[(2, 2)], (1, 1), (4, 4)), &p));
        assert!(p.is_simple());
    }

    #[test]
    fn brute_force_cases() {
        assert_eq!(brute_force_longest(&grid(3, 3, &[], (1, 1), (3, 3))).unwrap().len(), 9);
        assert_eq!(brute_force_longest(&grid(2, 3, &[], (1, 1), (2, 3))).unwrap().len(), 6);
        assert!(brute_force_longest(&grid(4, 4, &[], (1, 1), (4, 4))).is_ok());
        assert!(matches!(brute_force_longest(&grid(5, 5, &[], (1, 1), (5, 5))), Err(Error::Budget(_))));
    }

    #[test]
    fn beam_width_zero_rejected() {
        assert!(matches!(
            longest_simple_path(&grid(2, 2, &[], (1, 1), (2, 2)), 0),
            Err(Error::Contract(_))
        ));
    }
}
