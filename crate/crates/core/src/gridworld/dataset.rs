use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{generate_grid, Cell, Grid};
use super::oracle::{longest_simple_path, safest_path, shortest_path, DEFAULT_BEAM_WIDTH};
use super::path::{wall_adjacency_score, Path};
use super::Target;
use crate::{Error, Result};

/// Oracle paths for one grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldTriple {
    pub short: Path,
    pub safe: Path,
    pub long: Path,
    pub short_len: usize,
    pub safe_adjacency: usize,
    pub long_len: usize,
}

impl GoldTriple {
    pub fn compute(grid: &Grid, beam_width: usize) -> Result<Self> {
        let short = shortest_path(grid)?;
        let safe = safest_path(grid)?;
        let long = longest_simple_path(grid, beam_width)?;
        Ok(GoldTriple {
            short_len: short.len(),
            safe_adjacency: wall_adjacency_score(grid, &safe)?,
            long_len: long.len(),
            short,
            safe,
            long,
        })
    }

    pub fn path(&self, target: Target) -> &Path {
        match target {
            Target::Short => &self.short,
            Target::Safe => &self.safe,
            Target::Long => &self.long,
        }
    }

    /// Pairwise distinct paths, and no single gold path realises all three optima at once.
    pub fn is_distinct(&self, grid: &Grid) -> bool {
        let pairwise = self.short != self.safe && self.short != self.long && self.safe != self.long;
        let realises_all =
            |p: &Path| p.len() == self.short_len && p.len() == self.long_len && wall_adjacency_score(grid, p).ok() == Some(self.safe_adjacency);
        pairwise && ![&self.short, &self.safe, &self.long].into_iter().any(realises_all)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub grid: Grid,
    pub gold: GoldTriple,
    pub split: Split,
}

/// Generation parameters. Sizes and densities are drawn uniformly from the inclusive ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub count: usize,
    pub rows: [usize; 2],
    pub cols: [usize; 2],
    pub wall_density: [f64; 2],
    pub beam_width: usize,
    /// Candidate grids tried before giving up.
    pub max_attempts: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            count: 4000,
            rows: [4, 5],
            cols: [4, 5],
            wall_density: [0.1, 0.35],
            beam_width: DEFAULT_BEAM_WIDTH,
            max_attempts: 200_000,
        }
    }
}

impl DataConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.rows[0] < 2 || self.cols[0] < 2 || self.rows[0] > self.rows[1] || self.cols[0] > self.cols[1] {
            return bad("data.rows/cols must be increasing ranges starting at >= 2");
        }
        if !(0.0..=0.4).contains(&self.wall_density[0]) || !(0.0..=0.4).contains(&self.wall_density[1]) || self.wall_density[0] > self.wall_density[1]
        {
            return bad("data.wall_density must be an increasing range inside [0, 0.4]");
        }
        if self.beam_width == 0 {
            return bad("data.beam_width must be >= 1");
        }
        Ok(())
    }
}

/// Generates `config.count` filtered records and assigns 70/10/20 splits after a seeded shuffle.
pub fn build_dataset(config: &DataConfig, seed: u64) -> Result<Vec<DatasetRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept: Vec<(Grid, GoldTriple)> = Vec::with_capacity(config.count);
    let mut attempts = 0;
    while kept.len() < config.count {
        if attempts == config.max_attempts {
            return Err(Error::Budget(format!(
                "kept {} of {} records after {attempts} candidate grids",
                kept.len(),
                config.count
            )));
        }
        attempts += 1;
        let rows = rng.gen_range(config.rows[0]..=config.rows[1]);
        let cols = rng.gen_range(config.cols[0]..=config.cols[1]);
        let density = if config.wall_density[0] == config.wall_density[1] {
            config.wall_density[0]
        } else {
            rng.gen_range(config.wall_density[0]..=config.wall_density[1])
        };
        let grid_seed = rng.next_u64();
        let grid = match generate_grid(rows, cols, density, grid_seed) {
            Ok(g) => g,
            Err(Error::GenerationFailed { .. }) => continue,
            Err(e) => return Err(e),
        };
        let gold = GoldTriple::compute(&grid, config.beam_width)?;
        if gold.is_distinct(&grid) && !kept.iter().any(|(g, _)| same_layout(g, &grid)) {
            kept.push((grid, gold));
        }
    }
    kept.shuffle(&mut rng);
    let n = kept.len();
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
    Ok(kept
        .into_iter()
        .enumerate()
        .map(|(i, (grid, gold))| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            DatasetRecord {
                grid: grid.with_id(format!("tgw-{i:05}")),
                gold,
                split,
            }
        })
        .collect())
}

fn same_layout(a: &Grid, b: &Grid) -> bool {
    a.rows() == b.rows() && a.cols() == b.cols() && a.start() == b.start() && a.goal() == b.goal() && a.walls() == b.walls()
}

/// One line of the dataset file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    rows: usize,
    cols: usize,
    walls: Vec<Cell>,
    start: Cell,
    goal: Cell,
    short: Path,
    safe: Path,
    long: Path,
    short_len: usize,
    safe_adjacency: usize,
    long_len: usize,
    split: Split,
}

impl DatasetRecord {
    pub fn to_json_line(&self) -> String {
        let line = RecordLine {
            id: self.grid.id().to_string(),
            rows: self.grid.rows(),
            cols: self.grid.cols(),
            walls: self.grid.walls().to_vec(),
            start: self.grid.start(),
            goal: self.grid.goal(),
            short: self.gold.short.clone(),
            safe: self.gold.safe.clone(),
            long: self.gold.long.clone(),
            short_len: self.gold.short_len,
            safe_adjacency: self.gold.safe_adjacency,
            long_len: self.gold.long_len,
            split: self.split,
        };
        serde_json::to_string(&line).expect("record serializes")
    }

    pub fn from_json_line(text: &str) -> Result<Self> {
        let l: RecordLine = serde_json::from_str(text)?;
        let grid = Grid::new(l.id, l.rows, l.cols, l.walls, l.start, l.goal)?;
        Ok(DatasetRecord {
            grid,
            gold: GoldTriple {
                short: l.short,
                safe: l.safe,
                long: l.long,
                short_len: l.short_len,
                safe_adjacency: l.safe_adjacency,
                long_len: l.long_len,
            },
            split: l.split,
        })
    }
}

/// Writes line-delimited JSON, one record per line.
pub fn write_dataset<W: Write>(records: &[DatasetRecord], mut out: W) -> Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(DatasetRecord::from_json_line(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::is_valid_path;

    fn small(count: usize) -> DataConfig {
        DataConfig {
            count,
            rows: [4, 4],
            cols: [4, 4],
            wall_density: [0.1, 0.3],
            ..DataConfig::default()
        }
    }

    #[test]
    fn ten_records_on_four_by_four() {
        let ds = build_dataset(&small(10), 3).unwrap();
        assert_eq!(ds.len(), 10);
        for r in &ds {
            assert!(r.gold.is_distinct(&r.grid));
            for t in Target::ALL {
                assert!(is_valid_path(&r.grid, r.gold.path(t)));
            }
            assert!(r.gold.long.is_simple());
        }
        let train = ds.iter().filter(|r| r.split == Split::Train).count();
        let val = ds.iter().filter(|r| r.split == Split::Validation).count();
        assert_eq!((train, val, ds.len() - train - val), (7, 1, 2));
    }

    #[test]
    fn zero_target_is_empty() {
        assert!(build_dataset(&small(0), 1).unwrap().is_empty());
    }

    #[test]
    fn tiny_empty_grids_exhaust_the_budget() {
        // On an empty 2x2 grid all cost-free routes coincide, so nothing passes the filter.
        let cfg = DataConfig {
            count: 1,
            rows: [2, 2],
            cols: [2, 2],
            wall_density: [0.0, 0.0],
            max_attempts: 200,
            ..DataConfig::default()
        };
        assert!(matches!(build_dataset(&cfg, 5), Err(Error::Budget(_))));
    }

    #[test]
    fn json_lines_round_trip_bytewise() {
        let ds = build_dataset(&small(6), 11).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        let mut again = Vec::new();
        write_dataset(&back, &mut again).unwrap();
        assert_eq!(buf, again);
        let first = String::from_utf8(buf).unwrap();
        let keys: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        for k in [
            "id",
            "rows",
            "cols",
            "walls",
            "start",
            "goal",
            "short",
            "safe",
            "long",
            "short_len",
            "safe_adjacency",
            "long_len",
            "split",
        ] {
            assert!(keys.get(k).is_some(), "missing key {k}");
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = build_dataset(&small(8), 42).unwrap();
        let b = build_dataset(&small(8), 42).unwrap();
        assert_eq!(a, b);
    }
}
