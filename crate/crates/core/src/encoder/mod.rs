//! Tokenizer, toy transformer encoder and masked-language-model machinery.

pub mod checkpoint;
pub mod mlm;
pub mod tensor;
pub mod tokenizer;
pub mod transformer;

pub use mlm::{mask_for_mlm, mlm_loss, MaskedInput};
pub use tensor::{Gradients, Matrix, ParamId, ParamSet, Tape, Var};
pub use tokenizer::Tokenizer;
pub use transformer::{build_context, build_single, ContextEncoding, ContextInput, Encoder, EncoderConfig, EncoderParams};
