//! Early-exit decisions: flip statistics gathered during training, the
//! recurrent ETS classifier, the QS/GS retrieval heuristics and the policy
//! combinations built from them.

pub mod decide;
pub mod ets;
pub mod flips;
pub mod gru;
pub mod heuristics;

pub use decide::{decide_exit, random_draws, PolicyKind, QuerySignals, StageSignal, Thresholds};
pub use ets::{build_sequence, predict, train_ets, EtsExample, EtsTrainConfig, EtsTrainReport};
pub use flips::{count_flips, label_from_flips, leave_one_out_top1, ExitLabel, FlipTable};
pub use gru::{EtsClassifier, GruLayer, SEQ_LEN};
pub use heuristics::{
    calibrate_threshold, gs_exit, gs_margin, gs_margin_from_scan, qs_exit, qs_score, Calibration, ExitRule, GsMode,
};
