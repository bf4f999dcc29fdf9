use serde::{Deserialize, Serialize};

use super::config::ModelConfig;

/// Name, shape and position of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one decoder block's tensors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub mlp_norm: usize,
    pub w1: usize,
    pub w2: usize,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    pub(crate) tok_emb: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) final_norm: usize,
    pub(crate) head: usize,
    total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, d, m) = (cfg.vocab_size, cfg.d_model, cfg.mlp_hidden());
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let spec = TensorSpec {
                name,
                shape,
                offset,
            };
            offset += spec.len();
            let at = spec.offset;
            tensors.push(spec);
            at
        };
        let tok_emb = push("tok_emb".into(), vec![v, d]);
        let layers = (0..cfg.n_layers)
            .map(|i| LayerOffsets {
                attn_norm: push(format!("layers.{i}.attn_norm"), vec![d]),
                wq: push(format!("layers.{i}.wq"), vec![d, d]),
                wk: push(format!("layers.{i}.wk"), vec![d, d]),
                wv: push(format!("layers.{i}.wv"), vec![d, d]),
                wo: push(format!("layers.{i}.wo"), vec![d, d]),
                mlp_norm: push(format!("layers.{i}.mlp_norm"), vec![d]),
                w1: push(format!("layers.{i}.w1"), vec![d, m]),
                w2: push(format!("layers.{i}.w2"), vec![m, d]),
            })
            .collect();
        let final_norm = push("final_norm".into(), vec![d]);
        let head = push("head".into(), vec![d, v]);
        Self {
            tensors,
            tok_emb,
            layers,
            final_norm,
            head,
            total: offset,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_matches_formula() {
        for cfg in [
            ModelConfig::default(),
            ModelConfig {
                n_layers: 1,
                d_model: 8,
                n_heads: 2,
                head_dim: 4,
                vocab_size: 11,
                ..Default::default()
            },
        ] {
            let layout = ParamLayout::new(&cfg);
            let mut next = 0;
            for t in layout.tensors() {
                assert_eq!(t.offset, next);
                next += t.len();
            }
            assert_eq!(layout.total(), cfg.parameter_count());
        }
        // 64*64 + 2*(2*64 + 4*64*64 + 2*64*256) + 64 + 64*64
        assert_eq!(ModelConfig::default().parameter_count(), 106_816);
    }
}
