//! Gridworld planning instances: generation, text formats, validity rules,
//! attribute scores and exact/approximate path oracles.

mod dataset;
mod grid;
mod oracle;
mod path;

pub use dataset::{build_dataset, read_dataset, write_dataset, DataConfig, DatasetRecord, GoldTriple, Split};
pub use grid::{generate_grid, parse_prompt, render_prompt, Cell, Grid};
pub use oracle::{brute_force_longest, longest_simple_path, safest_path, shortest_path, BRUTE_FORCE_MAX_CELLS, DEFAULT_BEAM_WIDTH};
pub use path::{is_valid_path, parse_path, validate_path, wall_adjacency_score, Path, Violation};

/// Which attribute a path (or a steering run) is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Short,
    Safe,
    Long,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Short, Target::Safe, Target::Long];

    pub fn index(self) -> usize {
        match self {
            Target::Short => 0,
            Target::Safe => 1,
            Target::Long => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Short => "short",
            Target::Safe => "safe",
            Target::Long => "long",
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Target {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "short" => Ok(Target::Short),
            "safe" => Ok(Target::Safe),
            "long" => Ok(Target::Long),
            other => Err(crate::Error::Config(format!("unknown target {other:?}"))),
        }
    }
}
