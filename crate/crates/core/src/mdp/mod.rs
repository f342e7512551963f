//! Average-cost MDP control on the birth-death packet kernel: exact relative
//! value iteration for small instances, and the two per-link learning
//! architectures.

pub mod instance;
pub mod learn;
pub mod potential;
pub mod qfactor;
pub mod rvi;
pub mod step;

pub use instance::{build_instance, JointChannel, MdpConfig, MdpInstance};
pub use learn::{evaluate_rule, train_potential, train_qfactor, TrainOptions, TrainReport};
pub use potential::{approx_v_action, learn_v_update, PotentialLearner, PotentialTable};
pub use qfactor::{approx_q_action, learn_q_update, BidRule, QFactorLearner, QFactorTable};
pub use rvi::{relative_value_iteration, RviSolution};
pub use step::{step_size, StepSize};
