//! Rayon-backed executor. Results are collected in input order and reduced
//! sequentially by the callers, so output is identical for any worker
//! count.

use rayon::prelude::*;

use hmic_core::exec::Executor;

use crate::error::{PipelineError, Result};

pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `workers == 0` uses all cores.
    pub fn new(workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
        Ok(RayonExecutor { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync,
    {
        self.pool
            .install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
    }
}

/// Effective worker count: CLI flag, then HMIC_WORKERS, then the config
/// value; 0 means all cores.
pub fn resolve_workers(flag: Option<usize>, config_value: usize) -> usize {
    if let Some(w) = flag {
        return w;
    }
    if let Ok(env) = std::env::var("HMIC_WORKERS") {
        if let Ok(w) = env.parse::<usize>() {
            return w;
        }
    }
    config_value
}
