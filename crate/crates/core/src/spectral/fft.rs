use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

type PlanKey = (usize, bool);

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft plan cache poisoned");
    map.entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// In-place n-dimensional FFT of a row-major `m^n` array. The inverse is normalized.
pub(crate) fn fft_nd(data: &mut [Complex64], dim_n: usize, m: usize, inverse: bool) {
    let fft = plan(m, inverse);
    for axis in 0..dim_n {
        let stride = m.pow((dim_n - 1 - axis) as u32);
        if stride == 1 {
            data.par_chunks_mut(m).for_each(|line| fft.process(line));
            continue;
        }
        let block = m * stride;
        for chunk in data.chunks_mut(block) {
            // transpose so that the lines along `axis` are contiguous
            let mut buf = vec![Complex64::default(); block];
            for k in 0..m {
                for j in 0..stride {
                    buf[j * m + k] = chunk[k * stride + j];
                }
            }
            buf.par_chunks_mut(m).for_each(|line| fft.process(line));
            for k in 0..m {
                for j in 0..stride {
                    chunk[k * stride + j] = buf[j * m + k];
                }
            }
        }
    }
    if inverse {
        let s = 1.0 / data.len() as f64;
        data.par_iter_mut().for_each(|c| *c *= s);
    }
}
