//! Heteroscedastic losses and aleatoric / epistemic uncertainty estimates
//! from Monte Carlo dropout passes.

mod angle;
mod estimate;
mod loss;

pub use angle::{angle_to_minutes, circular_minutes, time_angle_au, time_angle_encode, time_angle_eu, time_angle_recover};
pub use estimate::{
    au_categorical, au_numeric, entropy, eu_categorical, eu_numeric, mc_sample, mc_sample_each, mean_probabilities,
    population_variance, predicted_mean, SampleSet, UncertaintyReport,
};
pub use loss::{
    draw_logit_noise, loss_categorical, loss_numeric, loss_numeric_grad, sampled_logit_nll, sampled_logit_nll_grad,
    total_loss,
};
