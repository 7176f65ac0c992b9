use serde::{Deserialize, Serialize};

use crate::gridworld::{Cell, Grid};
use crate::numerics::Matrix;
use crate::tinylm::{TokenId, Vocab, NEWLINE};
use crate::{Error, Result};

/// Normalised attention mass per grid cell, read from one query position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAttentionMap {
    pub layer: usize,
    pub query_position: usize,
    pub cells: Vec<(Cell, f64)>,
    /// Cells that had no tokens in the sequence.
    pub omitted: Vec<Cell>,
}

impl CellAttentionMap {
    pub fn get(&self, c: Cell) -> Option<f64> {
        self.cells.iter().find(|(x, _)| *x == c).map(|(_, p)| *p)
    }
}

/// Token positions standing for each cell: its character in the prompt body plus
/// any `(r,c)` token for it later in the sequence.
///
/// `tokens` must start with the encoded prompt (`BOS`, optional tag, `GRID r c` header).
pub fn cell_token_spans(grid: &Grid, tokens: &[TokenId]) -> Vec<(Cell, Vec<usize>)> {
    let mut spans: Vec<(Cell, Vec<usize>)> = (0..grid.cell_count()).map(|i| (grid.cell_at(i), Vec::new())).collect();
    let Some(body) = tokens.iter().position(|&t| t == NEWLINE).map(|p| p + 1) else {
        return spans;
    };
    let (mut r, mut c) = (1, 1);
    let mut pos = body;
    while pos < tokens.len() && r <= grid.rows() {
        if tokens[pos] == NEWLINE {
            r += 1;
            c = 1;
        } else {
            if c <= grid.cols() {
                spans[grid.index(Cell::new(r, c))].1.push(pos);
            }
            c += 1;
        }
        pos += 1;
    }
    for (i, &t) in tokens.iter().enumerate().skip(pos) {
        if let Some((row, col)) = Vocab::cell_of(t) {
            let cell = Cell::new(row, col);
            if grid.in_bounds(cell) {
                spans[grid.index(cell)].1.push(i);
            }
        }
    }
    spans
}

/// Head-averaged attention of the last position, averaged within each cell's span,
/// then normalised over cells.
pub fn cell_attention_map(attn: &[Matrix], spans: &[(Cell, Vec<usize>)], layer: usize) -> Result<CellAttentionMap> {
    let first = attn.first().ok_or_else(|| Error::contract("no attention heads"))?;
    let n = first.rows();
    if attn.iter().any(|a| a.shape() != (n, n)) || n == 0 {
        return Err(Error::shape("attention must be square and identical across heads"));
    }
    let last = n - 1;
    let mut row = vec![0.0; n];
    for a in attn {
        row.iter_mut().zip(a.row(last)).for_each(|(r, v)| *r += v / attn.len() as f64);
    }
    let mut cells = Vec::new();
    let mut omitted = Vec::new();
    for (cell, span) in spans {
        if span.is_empty() {
            omitted.push(*cell);
            continue;
        }
        if let Some(bad) = span.iter().find(|&&i| i >= n) {
            return Err(Error::shape(format!("span index {bad} beyond {n} positions")));
        }
        cells.push((*cell, span.iter().map(|&i| row[i]).sum::<f64>() / span.len() as f64));
    }
    let total: f64 = cells.iter().map(|(_, v)| v).sum();
    if total > 0.0 {
        cells.iter_mut().for_each(|(_, v)| *v /= total);
    }
    Ok(CellAttentionMap {
        layer,
        query_position: last,
        cells,
        omitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::generate_grid;
    use crate::tinylm::encode_prompt;

    fn uniform(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, 1.0 / (i + 1) as f64);
            }
        }
        m
    }

    #[test]
    fn spans_cover_every_cell_once_in_the_prompt() {
        let g = generate_grid(4, 5, 0.2, 3).unwrap();
        let toks = encode_prompt(&g, None).unwrap();
        let spans = cell_token_spans(&g, &toks);
        assert_eq!(spans.len(), 20);
        assert!(spans.iter().all(|(_, s)| s.len() == 1));
        let body = Vocab::get().detokenize(&toks);
        assert!(body.contains('S'));
        let s = spans.iter().find(|(c, _)| *c == g.start()).unwrap();
        assert_eq!(toks[s.1[0]], crate::tinylm::START);
    }

    #[test]
    fn uniform_attention_gives_uniform_map() {
        let spans: Vec<(Cell, Vec<usize>)> = (0..4).map(|i| (Cell::new(1, i + 1), vec![2 * i, 2 * i + 1])).collect();
        let m = cell_attention_map(&[uniform(8), uniform(8)], &spans, 0).unwrap();
        for (_, p) in &m.cells {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn concentrated_attention_gives_a_point_mass() {
        let mut a = Matrix::zeros(5, 5);
        a.set(4, 3, 1.0);
        let spans = vec![(Cell::new(1, 1), vec![0, 1]), (Cell::new(1, 2), vec![3]), (Cell::new(2, 1), vec![])];
        let m = cell_attention_map(&[a], &spans, 1).unwrap();
        assert_eq!(m.get(Cell::new(1, 2)), Some(1.0));
        assert_eq!(m.get(Cell::new(1, 1)), Some(0.0));
        assert_eq!(m.omitted, vec![Cell::new(2, 1)]);
        let total: f64 = m.cells.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
