//! Small federated learning simulator: softmax regression, a one-layer
//! perceptron and an embedding encoder, trained with hand-written
//! gradients under several aggregation schemes.

mod eval;
mod model;
mod train;

pub use eval::{accuracy, linear_eval, mse, FlData, Targets, LINEAR_EVAL_EPOCHS, LINEAR_EVAL_LR};
pub use model::{local_step, loss_and_grad, make_triplets, Arch, Loss, ModelParams};
pub use train::{
    aggregate, device_step, draw_stragglers, local_phase, make_subsets, run_round_decentralized,
    run_round_semidecentralized, run_training, MetricKind, Scheme, TrainConfig, TrainingTrace,
};
