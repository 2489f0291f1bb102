//! Mountain Car, tile coding and Q-learning with a crossbar value function.

pub mod agent;
pub mod mountain_car;
pub mod tiles;

pub use agent::{q_learning_episode, run_episodes, EpisodeOutcome, EpisodeRecord, QAgent};
pub use mountain_car::{Action, MountainCar, MountainCarState, Transition};
pub use tiles::{Overflow, TileCoder};
