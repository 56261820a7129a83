use super::mlp::{Activation, MlpSpec};

/// Hidden topology shared by the denoisers, MLP classifier and flow nets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub time_embed_dim: usize,
    pub class_embed_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_dims: vec![128; 4],
            activation: Activation::Silu,
            time_embed_dim: 64,
            class_embed_dim: 64,
        }
    }
}

impl Architecture {
    pub fn small(width: usize, depth: usize, embed: usize) -> Self {
        Self {
            hidden_dims: vec![width; depth],
            activation: Activation::Silu,
            time_embed_dim: embed,
            class_embed_dim: embed,
        }
    }

    /// Spec for a net mapping `dim` to `out`, optionally class-conditioned.
    pub fn spec(&self, dim: usize, out: usize, classes: Option<(usize, bool)>) -> MlpSpec {
        let (class_embed_dim, num_classes, null_class) = match classes {
            Some((n, null)) => (self.class_embed_dim, n, null),
            None => (0, 0, false),
        };
        MlpSpec {
            input_dim: dim,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: out,
            activation: self.activation,
            time_embed_dim: self.time_embed_dim,
            class_embed_dim,
            num_classes,
            null_class,
        }
    }
}
