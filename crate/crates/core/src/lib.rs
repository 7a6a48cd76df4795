//! Neural synthesis of ALC class expressions from positive and negative
//! example individuals.

pub mod error;
pub mod expr;
pub mod kb;
pub mod datagen;
pub mod decode;
pub mod embeddings;
pub mod reasoner;
pub mod synth;
pub mod tensor;
pub mod vocab;

pub use error::{Error, Result};
pub use expr::ConceptExpr;
pub use kb::KnowledgeBase;
pub use reasoner::{InstanceSet, Reasoner};
pub use vocab::Vocabulary;
