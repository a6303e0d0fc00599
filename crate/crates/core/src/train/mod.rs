//! L1 training with Adam, the step learning-rate schedule, PSNR and
//! sliding-window evaluation.

mod adam;
mod config;
mod eval;
mod metrics;
mod trainer;

pub use adam::{AdamState, BETA1, BETA2, EPS};
pub use config::{lr_at, parse_config, TrainConfig};
pub use eval::{evaluate, restore_clip, ClipEval, EvalReport, Restorer};
pub use metrics::{l1_loss, psnr, PSNR_CAP};
pub use trainer::{
    read_history_csv, train_loop, write_history_csv, DataSource, HistoryRow, SyntheticDataset, TrainOutcome, Trainer,
};
