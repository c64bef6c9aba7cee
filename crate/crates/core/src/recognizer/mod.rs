//! Toy word recognizer: tone vocabulary, spectral features, affine model, CTC.

pub mod ctc;
pub mod features;
pub mod model;
pub mod train;
pub mod vocab;

pub use ctc::{ctc_loss, greedy_decode, log_softmax, CtcOutput};
pub use features::{featurize, FeatureConfig, Featurizer, NUM_FEATURES};
pub use model::{Recognizer, BLANK, NUM_CLASSES};
pub use train::{random_commands, receive_command, train_recognizer, RecognizerTrainingSpec, TrainingReport};
pub use vocab::{synth_command, Vocabulary, Word, DEFAULT_GAP_S, MAX_COMMAND_WORDS, NUM_WORDS};
