use super::model::{ForwardOptions, LmCheckpoint, QueryEdit, ResidualEdit};
use super::vocab::{TokenId, EOS};
use crate::Result;

/// An edit applied at every decode step.
#[derive(Debug, Clone, Copy)]
pub enum Intervention<'a> {
    Query { layer: usize, edit: QueryEdit<'a> },
    Residual(ResidualEdit<'a>),
}

impl<'a> Intervention<'a> {
    /// Forward options that apply this edit.
    pub fn options(self) -> ForwardOptions<'a> {
        match self {
            Intervention::Query { layer, edit } => ForwardOptions {
                query_edit: Some((layer, edit)),
                ..Default::default()
            },
            Intervention::Residual(edit) => ForwardOptions {
                residual_edit: Some(edit),
                ..Default::default()
            },
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl LmCheckpoint {
    /// Greedy continuation of `prompt`. Stops after EOS (not included) or `max_new` tokens,
    /// or when the context is full.
    pub fn generate(&self, prompt: &[TokenId], max_new: usize, intervention: Option<Intervention>) -> Result<Vec<TokenId>> {
        let opts = intervention.map(Intervention::options).unwrap_or_default();
        let mut seq = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < max_new && seq.len() < self.config.context_len {
            let fwd = self.forward(&seq, &opts)?;
            let next = argmax(fwd.logits.row(seq.len() - 1)) as TokenId;
            if next == EOS {
                break;
            }
            seq.push(next);
            out.push(next);
        }
        Ok(out)
    }
}
