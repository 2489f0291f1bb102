//! Classic under-powered car in a valley.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.5;

const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountainCarState {
    pub position: f64,
    pub velocity: f64,
}

impl MountainCarState {
    pub fn new(position: f64, velocity: f64) -> Result<Self> {
        let s = Self { position, velocity };
        if s.in_bounds() {
            Ok(s)
        } else {
            Err(Error::StateOutOfBounds { position, velocity })
        }
    }

    pub fn in_bounds(&self) -> bool {
        (MIN_POSITION..=MAX_POSITION).contains(&self.position)
            && (-MAX_SPEED..=MAX_SPEED).contains(&self.velocity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Back = 0,
    Coast = 1,
    Forward = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Back, Action::Coast, Action::Forward];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: MountainCarState,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct MountainCar {
    state: MountainCarState,
    done: bool,
}

impl MountainCar {
    pub fn new(state: MountainCarState) -> Result<Self> {
        let state = MountainCarState::new(state.position, state.velocity)?;
        Ok(Self { state, done: false })
    }

    /// At rest somewhere in `[-0.6, -0.4)`.
    pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            state: MountainCarState {
                position: rng.random_range(-0.6..-0.4),
                velocity: 0.0,
            },
            done: false,
        }
    }

    pub fn state(&self) -> MountainCarState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let MountainCarState { position, velocity } = self.state;
        let velocity = (velocity + FORCE * (action.index() as f64 - 1.0)
            - GRAVITY * (3.0 * position).cos())
        .clamp(-MAX_SPEED, MAX_SPEED);
        let mut position = (position + velocity).clamp(MIN_POSITION, MAX_POSITION);
        let mut velocity = velocity;
        if position <= MIN_POSITION {
            position = MIN_POSITION;
            velocity = 0.0;
        }
        self.state = MountainCarState { position, velocity };
        self.done = position >= GOAL_POSITION;
        Ok(Transition {
            state: self.state,
            reward: -1.0,
            done: self.done,
        })
    }
}
