//! Generate one grid, render its prompt and print the three reference paths.

use protosteer::gridworld::{generate_grid, render_prompt, validate_path, wall_adjacency_score, GoldTriple, Target};

fn main() -> protosteer::Result<()> {
    // first seed whose three optima are pairwise distinct, as the dataset requires
    let (grid, gold) = (0..)
        .filter_map(|seed| {
            let g = generate_grid(5, 5, 0.25, seed).ok()?;
            let gold = GoldTriple::compute(&g, 512).ok()?;
            gold.is_distinct(&g).then_some((g, gold))
        })
        .next()
        .expect("some seed qualifies");
    println!("{}", render_prompt(&grid));
    for t in Target::ALL {
        let p = gold.path(t);
        println!("{t}: {p}  (cells {}, wall adjacency {})", p.len(), wall_adjacency_score(&grid, p)?);
    }

    // a path through a wall is rejected with a typed violation
    let mut cells = gold.short.cells().to_vec();
    if let Some(w) = grid.walls().first() {
        cells.insert(1, *w);
        let bad = protosteer::gridworld::Path::new(cells)?;
        println!("tampered path: {:?}", validate_path(&grid, &bad).unwrap_err());
    }
    Ok(())
}
