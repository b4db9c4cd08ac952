//! Metrics, Fréchet distance, Welch's t-test, and integrated-gradients
//! attribution.

mod attribution;
mod metrics;

pub use attribution::{
    integrated_gradients, integrated_gradients_fn, logit_input_gradients, write_attribution_pgm, write_signal_attribution_csv,
    AttributionMap, PathAttribution, MIN_IG_STEPS,
};
pub use metrics::{accuracy, auroc, frechet_distance, gaussian_stats, mean_std, welch_t_test, GaussianStats};
