//! Stage-wise continual pre-training: schedules, plans, checkpoints and the
//! training loop.

mod checkpoint;
mod plan;
mod run;
mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use plan::{enumerate_orders, enumerate_plans, ExperimentPlan, PlanMode, TrainOptions};
pub use run::{
    curve_csv, evaluate_record, fresh_checkpoint, open_stage_stream, read_records, run_plan, run_stage, stage_dir_name,
    write_records, CurvePoint, ExperimentData, LanguageData, PlanOutcome, StageContext, StageOutcome, TransferRecord,
};
pub use schedule::{
    lr_at, lr_at_continuous, LrSchedule, StageSpec, FULL_SCALE_STAGE_STEPS, FULL_SCALE_TAIL_STEPS,
    FULL_SCALE_WARMUP_STEPS,
};
