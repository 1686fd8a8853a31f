//! Fractional Brownian motion: covariance, the Volterra kernel and samplers.

mod covariance;
mod grid;
mod kernel;
mod path;
mod sampler;
mod volterra;

pub use covariance::{cov_r, covariance_matrix, increment_covariance, increment_variance};
pub use grid::{HurstIndex, Regime, TimeGrid};
pub use kernel::{KernelTable, KERNEL_CACHE_MAGIC, KERNEL_CACHE_VERSION};

pub use path::{write_paths_csv, ProcessLabel, SamplePath};
pub use sampler::{sample_fbm_cholesky, CholeskySampler};
pub use volterra::{sample_wiener, volterra_build, wiener_path, VolterraOperator};
