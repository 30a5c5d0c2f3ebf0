//! Citation function and citation sentiment classification.
//!
//! The pipeline: ingest citation-context corpora ([`corpus`]), learn a
//! subword vocabulary ([`tokenizer`]), build a transformer or recurrent
//! encoder ([`encoder`]), optionally continue language-model training on
//! unlabeled in-domain text ([`pretrain`]), fine-tune a single linear head
//! ([`classify`]) and score it with stratified k-fold cross-validated F1
//! ([`evaluate`]).

pub mod autograd;
pub mod classify;
pub mod corpus;
pub mod encoder;
pub mod evaluate;
pub mod optim;
pub mod pretrain;
pub mod seed;
pub mod tensor;
pub mod tokenizer;

pub use classify::{Classifier, TrainConfig};
pub use corpus::{CitationContext, Corpus, Dataset, FoldPlan, LabelScheme, Task};
pub use encoder::{Checkpoint, Encoder, EncoderConfig, Family};
pub use evaluate::{ConfusionMatrix, CvReport, MetricSet};
pub use pretrain::{Objective, PretrainConfig};
pub use tensor::Tensor;
pub use tokenizer::{TokenSeq, Vocab};
