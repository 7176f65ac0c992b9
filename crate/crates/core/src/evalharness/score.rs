use serde::{Deserialize, Serialize};

use crate::gridworld::{parse_path, validate_path, wall_adjacency_score, GoldTriple, Grid, Target, Violation};

/// Exactly one bucket per scored generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bucket {
    Success,
    ValidSuboptimal,
    Violation,
    ParseFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub bucket: Bucket,
    pub violation: Option<Violation>,
    /// Cell count of the parsed path, valid or not.
    pub length: Option<usize>,
    /// Wall adjacency, only for valid paths.
    pub adjacency: Option<usize>,
}

impl Outcome {
    pub fn is_valid(&self) -> bool {
        matches!(self.bucket, Bucket::Success | Bucket::ValidSuboptimal)
    }

    /// Length for short/long targets, adjacency for safe; valid paths only.
    pub fn attribute(&self, target: Target) -> Option<f64> {
        if !self.is_valid() {
            return None;
        }
        match target {
            Target::Safe => self.adjacency.map(|a| a as f64),
            Target::Short | Target::Long => self.length.map(|l| l as f64),
        }
    }
}

/// Parse, check validity, then compare the attribute against the oracle optimum.
pub fn score_generation(grid: &Grid, gold: &GoldTriple, text: &str, target: Target) -> Outcome {
    let path = match parse_path(text) {
        Ok(p) => p,
        Err(_) => {
            return Outcome {
                bucket: Bucket::ParseFailure,
                violation: None,
                length: None,
                adjacency: None,
            }
        }
    };
    if let Err(v) = validate_path(grid, &path) {
        return Outcome {
            bucket: Bucket::Violation,
            violation: Some(v),
            length: Some(path.len()),
            adjacency: None,
        };
    }
    let adjacency = wall_adjacency_score(grid, &path).expect("validated path");
    let success = match target {
        Target::Short => path.len() == gold.short_len,
        Target::Safe => adjacency == gold.safe_adjacency,
        Target::Long => path.len() >= gold.long_len,
    };
    Outcome {
        bucket: if success { Bucket::Success } else { Bucket::ValidSuboptimal },
        violation: None,
        length: Some(path.len()),
        adjacency: Some(adjacency),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::Path;
    use crate::testutil::records;

    fn render(p: &Path) -> String {
        p.to_string()
    }

    #[test]
    fn gold_paths_succeed_for_their_own_target() {
        for rec in records(30, 1) {
            for t in Target::ALL {
                let o = score_generation(&rec.grid, &rec.gold, &render(rec.gold.path(t)), t);
                assert_eq!(o.bucket, Bucket::Success, "{} {t}", rec.grid.id());
            }
        }
    }

    #[test]
    fn wall_step_is_a_violation() {
        let rec = records(30, 2).into_iter().find(|r| !r.grid.walls().is_empty()).unwrap();
        let wall = rec.grid.walls()[0];
        let mut cells = rec.gold.short.cells().to_vec();
        cells.insert(1, wall);
        let o = score_generation(&rec.grid, &rec.gold, &Path::new(cells).unwrap().to_string(), Target::Short);
        assert_eq!(o.bucket, Bucket::Violation);
        assert!(o.violation.is_some());
        assert_eq!(o.adjacency, None);
        assert_eq!(o.attribute(Target::Short), None);
    }

    #[test]
    fn garbage_is_a_parse_failure() {
        let rec = &records(5, 3)[0];
        let o = score_generation(&rec.grid, &rec.gold, "(1,1) -> ->", Target::Safe);
        assert_eq!(o.bucket, Bucket::ParseFailure);
        assert_eq!(o.length, None);
    }

    #[test]
    fn a_longer_detour_is_valid_but_suboptimal_for_short() {
        // the long gold path is strictly longer than the shortest on distinct records
        let rec = records(30, 4).into_iter().find(|r| r.gold.long_len > r.gold.short_len).unwrap();
        let o = score_generation(&rec.grid, &rec.gold, &render(&rec.gold.long), Target::Short);
        assert_eq!(o.bucket, Bucket::ValidSuboptimal);
        assert_eq!(o.attribute(Target::Short), Some(rec.gold.long_len as f64));
    }

    #[test]
    fn long_accepts_anything_at_least_the_bound() {
        let rec = &records(10, 5)[0];
        assert_eq!(
            score_generation(&rec.grid, &rec.gold, &render(&rec.gold.long), Target::Long).bucket,
            Bucket::Success
        );
        assert_eq!(
            score_generation(&rec.grid, &rec.gold, &render(&rec.gold.short), Target::Long).bucket,
            Bucket::ValidSuboptimal
        );
    }
}
