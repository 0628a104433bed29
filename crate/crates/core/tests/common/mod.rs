#![allow(dead_code)]

use club_core::auction::run_round;
use club_core::env::{build_tabular_env, EnvDims, EnvSpec, EpisodeTranscript, NoiseModel, StepRecord};
use club_core::rng::{streams, substream, StreamRng};
use club_core::seller::{EpisodeEvents, SellerState};

pub fn small_dims() -> EnvDims {
    EnvDims {
        d: 4,
        n_bidders: 2,
        horizon: 2,
        n_states: 2,
        n_items: 2,
    }
}

pub fn small_env(seed: u64) -> EnvSpec {
    build_tabular_env(small_dims(), NoiseModel::Uniform, 0.9, seed).unwrap()
}

pub fn one_hot(d: usize, j: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[j] = 1.0;
    v
}

/// Truthful rollouts against `seller`, as the harness would run them.
pub struct Driver {
    valuations: StreamRng,
    transitions: StreamRng,
    pub k: usize,
}

impl Driver {
    pub fn new(seed: u64) -> Self {
        Driver {
            valuations: substream(seed, streams::VALUATIONS),
            transitions: substream(seed, streams::TRANSITIONS),
            k: 0,
        }
    }

    pub fn episode(&mut self, env: &EnvSpec, seller: &mut SellerState) -> (EpisodeTranscript, EpisodeEvents) {
        self.k += 1;
        let mut transcript = EpisodeTranscript {
            episode: self.k,
            steps: Vec::new(),
            terminal_state: None,
        };
        let mut x = env.initial_state;
        for h in 0..env.dims.horizon {
            let action = seller.act(h, x).unwrap();
            let valuations = env.sample_valuations(h, x, action.item, &mut self.valuations).unwrap();
            let outcome = run_round(&valuations, &action.reserves).unwrap();
            let next = env.sample_transition(h, x, action.item, &mut self.transitions).unwrap();
            transcript.steps.push(StepRecord {
                state: x,
                item: action.item,
                reserves: action.reserves,
                bids: valuations.clone(),
                valuations,
                outcome,
                used_pi_rand: action.used_pi_rand,
                rand_bidder: action.rand_bidder,
            });
            x = next;
        }
        transcript.terminal_state = Some(x);
        seller.observe_episode(&transcript).unwrap();
        let events = seller.end_of_episode(self.k).unwrap();
        (transcript, events)
    }
}
