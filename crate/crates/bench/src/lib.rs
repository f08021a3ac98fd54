//! Benchmark fixtures shared by the criterion targets.

use misivqr::dgp::sample_dataset;
use misivqr::{Dataset, Design};

/// A design-2 sample of size `n` with a fixed seed.
pub fn design_sample(n: usize) -> Dataset {
    sample_dataset(&Design::get(2).expect("design").model(), n, 20240).expect("sample")
}
