//! Objectives, optimizer and the training loop for BaseNN, HNN and SymHNN.

pub mod losses;
pub mod optim;
mod trainer;

pub use losses::{
    loss_dynamics, loss_sym_k, loss_sym_total, loss_vectorfield, orthonormality_penalty,
    symmetry_losses, total_loss,
};
pub use optim::{delta_schedule, Adam, EarlyStopping, PlateauScheduler};
pub use trainer::{
    bracket_prior, default_mc_domain, train, write_history_csv, EpochRecord, Mode, ModelNet,
    TrainConfig, TrainedModel, CHECKPOINT_VERSION,
};
