//! The training recipe: LAMB, cosine schedule with warmup, soft-target
//! losses, Mixup/CutMix/RandAugment, and the train/eval loops.

pub mod config;
pub mod lamb;
pub mod mix;
pub mod randaugment;
pub mod schedule;
pub mod trainer;

pub use config::{LossKind, TrainConfig};
pub use lamb::Lamb;
pub use mix::{cutmix, cutmix_with_box, mixup, mixup_with_lambda, random_erase, sample_lambda, smooth_labels, CutBox};
pub use randaugment::{apply_op, AugOp, Image, RandAugment};
pub use schedule::{cosine_warmup_lr, lr_at_step};
pub use trainer::{
    center_crop_view, eval_resize_side, evaluate, in_top_k, resize_rgb, seed_for, steps_per_epoch, train_epochs, EvalResult, TrainOptions,
    TrainReport,
};
