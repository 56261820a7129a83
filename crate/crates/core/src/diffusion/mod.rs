//! Discrete-time DDPM: schedule, forward corruption, noise-prediction
//! training and ancestral sampling.

pub mod denoiser;
pub mod sample;
pub mod schedule;

pub use denoiser::{train_denoiser, DenoiserKind, DenoiserNet};
pub use sample::{ddpm_sample, read_trajectories_csv, reverse_chain, write_trajectories_csv, NoiseBank, Trajectory};
pub use schedule::{forward_marginal, forward_step, posterior_mean, NoiseSchedule};
