//! Generative models over token grids: an exact local-field oracle and a
//! seeded toy transformer.

mod lfm;
mod transformer;

pub use lfm::{LocalFieldModel, ParentOffset};
pub use transformer::{AttentionDump, KvCache, QuerySource, TinyTransformer, TransformerConfig};
