//! Multi-threaded bucket execution: one OS thread per simulated worker.

use graphfm_core::model::ModelError;
use graphfm_core::numerics::Scalar;
use graphfm_core::trainer::{BucketExecutor, BucketResult};

/// Runs each worker's bucket list on its own scoped thread. Results are
/// returned indexed by bucket, so the trainer's fixed-order reduction makes
/// the outcome independent of thread timing.
#[derive(Clone, Copy, Debug, Default)]
pub struct Threaded;

impl BucketExecutor for Threaded {
    fn run<T: Scalar, F>(&self, workers: &[Vec<usize>], job: &F) -> Vec<Result<BucketResult<T>, ModelError>>
    where
        F: Fn(usize) -> Result<BucketResult<T>, ModelError> + Sync,
    {
        let n: usize = workers.iter().map(|w| w.len()).sum();
        let mut out: Vec<Option<Result<BucketResult<T>, ModelError>>> = (0..n).map(|_| None).collect();
        let done: Vec<Vec<(usize, Result<BucketResult<T>, ModelError>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = workers
                .iter()
                .map(|buckets| s.spawn(move || buckets.iter().map(|&b| (b, job(b))).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("bucket worker panicked")).collect()
        });
        for (b, r) in done.into_iter().flatten() {
            out[b] = Some(r);
        }
        out.into_iter().map(|r| r.expect("every bucket assigned to a worker")).collect()
    }
}
