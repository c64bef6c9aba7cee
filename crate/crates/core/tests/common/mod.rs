#![allow(dead_code)]

pub mod ctc_oracle;

use std::sync::OnceLock;

use platewave::recognizer::{train_recognizer, Recognizer, RecognizerTrainingSpec, TrainingReport, Vocabulary};

pub const TRAIN_SEED: u64 = 1;

/// The default recognizer, trained once per test binary.
pub fn trained() -> &'static (Recognizer, TrainingReport) {
    static MODEL: OnceLock<(Recognizer, TrainingReport)> = OnceLock::new();
    MODEL.get_or_init(|| {
        train_recognizer(&Vocabulary::standard(), &RecognizerTrainingSpec::default(), TRAIN_SEED)
            .expect("default recognizer trains")
    })
}

pub fn recognizer() -> &'static Recognizer {
    &trained().0
}
